import csv
import io

import numpy as np
import pytest

from chaosmeasure.cli import main
from chaosmeasure.entropy_rate import log_lengths
from chaosmeasure.experiments import certify, certify_sequence, random_partition_scan, rows_to_csv
from chaosmeasure.files import parse_kv, read_symbols, read_trajectory, write_symbols
from chaosmeasure.maps import Ikeda, Logistic, generate_trajectory
from chaosmeasure.partitions import ThresholdPartition, load_partition, shift_coloring, symbolize


def body(path):
    """CSV text without the version/config-hash comment line."""
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# chaosmeasure ") and "config_hash=" in lines[0]
    return lines[1:]


def rows(path):
    return list(csv.DictReader(io.StringIO("\n".join(body(path)))))


# ---------------------------------------------------------------- simulate

def test_simulate_writes_8mb_trajectory(tmp_path, capsys):
    out = tmp_path / "r4.bin"
    assert main(["simulate", "--map", "logistic", "--r", "4", "--n", "1000000", "--out", str(out)]) == 0
    assert out.stat().st_size == 8_000_000
    t = read_trajectory(out)
    assert t.map == Logistic(4.0) and len(t) == 1_000_000
    np.testing.assert_array_equal(t.states, generate_trajectory(Logistic(4.0), n=1_000_000, burn_in=1000).states)
    assert "wrote 1000000 states" in capsys.readouterr().out


def test_simulate_ikeda_defaults_are_bounded(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["simulate", "--map", "ikeda", "--n", "100000"]) == 0
    s = read_trajectory(tmp_path / "ikeda.bin").states
    assert np.all(np.isfinite(s))
    assert -0.5 < s[:, 0].min() and s[:, 0].max() < 2.0
    assert -2.5 < s[:, 1].min() and s[:, 1].max() < 1.0


def test_simulate_invalid_parameter_is_usage_error(tmp_path, capsys):
    assert main(["simulate", "--map", "logistic", "--r", "5", "--out", str(tmp_path / "x.bin")]) == 2
    assert "0 < r <= 4" in capsys.readouterr().err
    assert not (tmp_path / "x.bin").exists()


# ---------------------------------------------------------------- estimate

SMALL = ["--dataset", "200000", "--min-length", "2000", "--max-length", "100000", "--lengths", "6",
         "--repeats", "3"]


def test_estimate_prints_h_inf_and_matches_library(tmp_path, capsys):
    out = tmp_path / "est.csv"
    assert main(["estimate", "--map", "logistic", "--r", "4", "--threshold", "0.5", "--method", "ctw",
                 *SMALL, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "[ctw] h_inf = 1.00" in text
    table = certify(ThresholdPartition([0.5]), Logistic(4.0), ["ctw"], 200_000, 0,
                    log_lengths(2000, 100_000, 6), 3)
    assert body(out) == rows_to_csv(table.rows(), {}).splitlines()[1:]
    got = rows(out)
    assert list(got[0]) == ["method", "N", "repeat", "value_bits", "stderr", "c", "gamma"]
    assert len(got) == 6 * 3 + 1
    summary = got[-1]
    assert summary["N"] == "inf" and float(summary["value_bits"]) == pytest.approx(1.0, abs=0.02)


def test_estimate_all_methods_emits_one_row_per_window(tmp_path):
    out = tmp_path / "all.csv"
    assert main(["estimate", "--map", "logistic", "--r", "4", "--threshold", "0.5", "--method", "all",
                 *SMALL, "--out", str(out)]) == 0
    got = rows(out)
    windows = [r for r in got if r["N"] != "inf"]
    assert {r["method"] for r in windows} == {"ctw", "lz", "block"}
    assert len(windows) == 3 * 6 * 3
    assert len({(r["method"], r["N"], r["repeat"]) for r in windows}) == len(windows)


def test_estimate_symbol_file(tmp_path, capsys):
    seq = symbolize(ThresholdPartition([0.5]), generate_trajectory(Logistic(4.0), n=200_000))
    path = tmp_path / "u.sym"
    write_symbols(seq, path)
    out = tmp_path / "sym.csv"
    assert main(["estimate", "--symbols", str(path), *SMALL, "--out", str(out)]) == 0
    table = certify_sequence(read_symbols(path), ["ctw"], 0, log_lengths(2000, 100_000, 6), 3)
    assert body(out) == rows_to_csv(table.rows(), {}).splitlines()[1:]
    assert "h_inf = 1.00" in capsys.readouterr().out


def test_estimate_unknown_method_lists_valid_ones(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--threshold", "0.5", "--method", "gzip"])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "ctw" in err and "lz" in err and "block" in err


def test_estimate_unknown_method_from_config(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("method = gzip\nthreshold = 0.5\n")
    assert main(["estimate", "--config", str(cfg)]) == 2
    assert "valid methods: ctw, lz, block, all" in capsys.readouterr().err


def test_estimate_missing_inputs_is_usage_error(capsys):
    assert main(["estimate", "--map", "logistic"]) == 2
    assert "--threshold" in capsys.readouterr().err


# ---------------------------------------------------------------- config files

def test_config_rejects_unknown_keys_and_wrong_command(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("bogus = 1\n")
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert "unknown keys bogus" in capsys.readouterr().err
    cfg.write_text("command = train\n")
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.txt")]) == 2


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("map = henon\nn = 50\n")
    out = tmp_path / "h.bin"
    assert main(["simulate", "--config", str(cfg), "--n", "70", "--out", str(out)]) == 0
    t = read_trajectory(out)
    assert t.map.name == "henon" and len(t) == 70


# ---------------------------------------------------------------- iterate

def test_iterate_default_range_and_echo_round_trip(tmp_path):
    a = tmp_path / "a"
    assert main(["iterate", "--map", "logistic", "--r", "3.7115", "--threshold", "0.5", "--n", "5000",
                 "--out", str(a)]) == 0
    files = sorted(p.name for p in a.glob("cloud_*.csv"))
    assert set(files) == {f"cloud_k{k:+d}.csv" for k in range(-3, 4)}
    echo = parse_kv((a / "config.txt").read_text())
    assert echo["command"] == "iterate" and echo["threshold"] == "0.5"

    b = tmp_path / "b"
    assert main(["iterate", "--config", str(a / "config.txt"), "--out", str(b)]) == 0
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_iterate_clouds_match_library(tmp_path):
    out = tmp_path / "it"
    assert main(["iterate", "--map", "logistic", "--r", "3.7115", "--threshold", "0.5", "--n", "3000",
                 "--k-min", "0", "--k-max", "1", "--out", str(out)]) == 0
    t = generate_trajectory(Logistic(3.7115), n=3000, burn_in=10_000)
    labels = symbolize(ThresholdPartition([0.5]), t)
    for k in (0, 1):
        buf = io.StringIO()
        shift_coloring(t, labels, k).write(buf)
        assert (out / f"cloud_k{k:+d}.csv").read_text() == buf.getvalue()
    # k = 0 is the direct symbolization coloring
    c0 = list(csv.DictReader(open(out / "cloud_k+0.csv")))
    assert [int(r["label"]) for r in c0] == labels.symbols.tolist()


def test_iterate_forward_image_reaches_r_over_4(tmp_path):
    out = tmp_path / "it"
    assert main(["iterate", "--map", "logistic", "--r", "3.7115", "--threshold", "0.5", "--n", "100000",
                 "--k-min", "1", "--k-max", "1", "--out", str(out)]) == 0
    pts = np.loadtxt(out / "cloud_k+1.csv", delimiter=",", skiprows=1)
    for label in (0, 1):
        assert pts[pts[:, 1] == label, 0].max() == pytest.approx(3.7115 / 4, abs=1e-3)


def test_iterate_rejects_empty_range(tmp_path):
    assert main(["iterate", "--threshold", "0.5", "--k-min", "2", "--k-max", "1", "--out", str(tmp_path)]) == 2


# ---------------------------------------------------------------- random partitions

def test_random_partitions_240_rows_match_library_and_rerun(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["random-partitions", "--map", "ikeda", "--eval-length", "3000"]
    assert main([*args, "--out", str(a)]) == 0
    assert "240 partitions" in capsys.readouterr().out
    got = rows(a)
    assert len(got) == 240
    assert {"config", "H_U_bits", "h_inf_bits"} <= set(got[0])
    lib = random_partition_scan(Ikeda(), seed=0, eval_length=3000)
    assert body(a) == rows_to_csv(lib, {}).splitlines()[1:]
    assert main([*args, "--config", str(a) + ".config", "--out", str(b)]) == 0
    assert a.read_text() == b.read_text()


# ---------------------------------------------------------------- train

TINY_TRAIN = ["train", "--map", "logistic", "--r", "3.7115", "--L", "2", "--trials", "2", "--steps", "30",
              "--batch-size", "32", "--eval-length", "2000", "--no-protocol"]


def test_train_is_reproducible_and_round_trips(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main([*TINY_TRAIN, "--out", str(a)]) == 0
    assert main([*TINY_TRAIN, "--out", str(b)]) == 0
    assert main(["train", "--config", str(a / "config.txt"), "--out", str(c)]) == 0
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs
    for other in (b, c):
        assert sorted(p.name for p in other.glob("*.csv")) == csvs
        for name in csvs:
            assert (a / name).read_text() == (other / name).read_text()
    x = np.random.default_rng(0).uniform(0, 1, (5000, 1))
    for pa in a.glob("partition_*.npz"):
        pb = load_partition(b / pa.name)
        np.testing.assert_array_equal(load_partition(pa).apply_batch(x), pb.apply_batch(x))


def test_train_rejects_ref_index(tmp_path, capsys):
    assert main([*TINY_TRAIN, "--ref-index", "0", "--out", str(tmp_path)]) == 2
    assert "ref-index" in capsys.readouterr().err
