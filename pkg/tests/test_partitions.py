import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaosmeasure.maps import Henon, Logistic, generate_trajectory
from chaosmeasure.partitions import (
    RandomMlpPartition,
    RandomMlpSpec,
    SymbolSequence,
    ThresholdPartition,
    load_partition,
    measurement_entropy,
    random_configs,
    reference_partition,
    sample_random_partitions,
    save_partition,
    shift_coloring,
    symbolize,
)

S1 = math.sin(math.pi / 8) ** 2
S3 = math.sin(3 * math.pi / 8) ** 2


@pytest.fixture(scope="module")
def r4_orbit():
    return generate_trajectory(Logistic(4.0), n=1_000_000)


# ---------------------------------------------------------------- threshold

def test_threshold_examples():
    p = ThresholdPartition([0.5])
    assert p.apply(0.2) == 0 and p.apply(0.7) == 1
    # a state on the boundary belongs to the lower cell
    assert p.apply(0.5) == 0
    assert p.apply(np.nextafter(0.5, 1)) == 1
    np.testing.assert_array_equal(ThresholdPartition([0.1, 0.5, 0.9]).apply_batch([0.0, 0.3, 0.6, 0.95]), [0, 1, 2, 3])


def test_threshold_reads_coordinate_zero_or_direction():
    p = ThresholdPartition([0.0])
    assert p.apply([0.1, -5.0]) == 1 and p.apply([-0.1, 5.0]) == 0
    d = ThresholdPartition([0.0], direction=[1.0, 1.0])
    assert d.apply([-0.1, 5.0]) == 1
    with pytest.raises(ValueError):
        d.apply_batch(np.zeros((3, 3)))


@pytest.mark.parametrize("bad", [[], [0.5, 0.5], [0.6, 0.4]])
def test_threshold_rejects_bad_boundaries(bad):
    with pytest.raises(ValueError):
        ThresholdPartition(bad)


def test_arcsine_quartiles_give_uniform_symbols(r4_orbit):
    # invariant density 1/(pi sqrt(x(1-x))) puts mass 1/4 in each cell
    s = symbolize(ThresholdPartition([S1, 0.5, S3]), r4_orbit)
    assert s.alphabet_size == 4
    np.testing.assert_allclose(s.frequencies(), 0.25, atol=0.003)
    assert measurement_entropy(s) == pytest.approx(2.0, abs=1e-4)


def test_symbolize_r4_halves(r4_orbit):
    s = symbolize(ThresholdPartition([0.5]), r4_orbit)
    assert len(s) == len(r4_orbit.states)
    np.testing.assert_allclose(s.frequencies(), 0.5, atol=0.002)


def test_symbolize_empty():
    s = symbolize(ThresholdPartition([0.5]), np.zeros((0, 1)))
    assert len(s) == 0 and s.alphabet_size == 2
    with pytest.raises(ValueError):
        measurement_entropy(s)


# ---------------------------------------------------------------- symbol sequences and entropy

def test_symbol_sequence_validates_alphabet():
    with pytest.raises(ValueError):
        SymbolSequence(np.array([0, 2]), 2)
    with pytest.raises(ValueError):
        SymbolSequence(np.array([-1]), 2)
    assert SymbolSequence(np.array([1, 0, 1]), 2)[1:].symbols.tolist() == [0, 1]


@pytest.mark.parametrize("symbols, m, expected", [
    ([0, 0, 0, 0], 2, 0.0),
    ([0, 1, 0, 1], 2, 1.0),
    ([0, 1, 2, 3], 4, 2.0),
    ([0, 0, 0, 1], 2, -(0.75 * math.log2(0.75) + 0.25 * math.log2(0.25))),
])
def test_measurement_entropy_examples(symbols, m, expected):
    assert measurement_entropy(SymbolSequence(np.array(symbols), m)) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 8).flatmap(lambda m: st.tuples(st.just(m), st.lists(st.integers(0, m - 1), min_size=1,
                                                                           max_size=300))))
def test_measurement_entropy_bounded_by_log_alphabet(case):
    m, symbols = case
    h = measurement_entropy(SymbolSequence(np.array(symbols), m))
    assert -1e-12 <= h <= math.log2(m) + 1e-12


# ---------------------------------------------------------------- shift coloring

def test_shift_zero_pairs_each_state_with_its_label():
    t = generate_trajectory(Logistic(4.0), n=1000)
    lab = symbolize(ThresholdPartition([0.5]), t)
    c = shift_coloring(t, lab, 0)
    np.testing.assert_array_equal(c.points, t.states)
    np.testing.assert_array_equal(c.labels, lab.symbols)


@settings(max_examples=50, deadline=None)
@given(st.integers(-20, 20))
def test_shift_algebra(k):
    t = generate_trajectory(Logistic(4.0), n=100)
    lab = symbolize(ThresholdPartition([0.5]), t)
    c = shift_coloring(t, lab, k)
    assert len(c.points) == 100 - abs(k)
    i = np.arange(len(c.points))
    src = i if k >= 0 else i - k
    np.testing.assert_array_equal(c.points, t.states[src + k])
    np.testing.assert_array_equal(c.labels, lab.symbols[src])


def test_preimage_coloring_of_r4(r4_orbit):
    # with k = -1 the label of x is the symbol of f(x): 1 iff f(x) > 1/2 iff x in (S1, S3)
    lab = symbolize(ThresholdPartition([0.5]), r4_orbit)
    c = shift_coloring(r4_orbit, lab, -1)
    x = c.points[:, 0]
    away = (np.abs(x - S1) > 1e-9) & (np.abs(x - S3) > 1e-9)
    np.testing.assert_array_equal(c.labels[away], ((x > S1) & (x < S3))[away])


def test_image_coloring_fills_the_range():
    m = Logistic(3.7115)
    t = generate_trajectory(m, n=200_000)
    lab = symbolize(ThresholdPartition([0.5]), t)
    c = shift_coloring(t, lab, 1)
    # both halves of [0, 1] map onto the same interval, so both labels reach its top r/4
    for a in (0, 1):
        assert c.points[c.labels == a, 0].max() == pytest.approx(m.r / 4, abs=1e-3)


def test_shift_rejects_out_of_range():
    t = generate_trajectory(Logistic(4.0), n=10)
    lab = symbolize(ThresholdPartition([0.5]), t)
    for k in (10, -10):
        with pytest.raises(ValueError):
            shift_coloring(t, lab, k)
    with pytest.raises(ValueError):
        shift_coloring(t, lab[:5], 1)


def test_colored_cloud_csv():
    t = generate_trajectory(Henon(), n=5)
    lab = symbolize(reference_partition("henon"), t)
    buf = io.StringIO()
    shift_coloring(t, lab, 2).write(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "x,y,label,shift"
    assert len(lines) == 4
    x, y, label, shift = lines[1].split(",")
    assert float(x) == t.states[2, 0] and float(y) == t.states[2, 1]
    assert int(label) == lab.symbols[0] and int(shift) == 2


# ---------------------------------------------------------------- random networks

def test_random_mlp_symbol_is_argmax_magnitude():
    p = RandomMlpPartition(RandomMlpSpec(n_layers=2, activation="tanh", output_dim=4, seed=3))
    x = np.random.default_rng(0).uniform(-2, 2, (500, 2))
    h = x
    for w, b, act in zip(p.net.weights, p.net.biases, p.net.activations):
        h = h @ w + b
        h = np.tanh(h) if act == "tanh" else h
    np.testing.assert_array_equal(p.apply_batch(x), np.argmax(np.abs(h), axis=1))
    assert p.spec.label == "2x64-tanh-m4"


@pytest.mark.parametrize("kw", [dict(n_layers=4), dict(activation="sigmoid"), dict(output_dim=1)])
def test_random_mlp_spec_validation(kw):
    base = dict(n_layers=1, activation="relu", output_dim=2)
    with pytest.raises(ValueError):
        RandomMlpSpec(**{**base, **kw})


def test_random_partition_family():
    assert len(random_configs()) == 12
    ps = sample_random_partitions(seed=0)
    assert len(ps) == 240
    assert len({p.seed for p in ps}) == 240
    x = np.random.default_rng(1).uniform(-2, 2, (200, 2))
    again = sample_random_partitions(seed=0)
    for a, b in zip(ps[::17], again[::17]):
        np.testing.assert_array_equal(a.apply_batch(x), b.apply_batch(x))
    assert sample_random_partitions(seed=1)[0].seed != ps[0].seed


# ---------------------------------------------------------------- serialization

@pytest.mark.parametrize("p", [
    ThresholdPartition([0.25, 0.5]),
    ThresholdPartition([-0.04], direction=[1.0, 0.03]),
    RandomMlpPartition(RandomMlpSpec(n_layers=3, activation="relu", output_dim=4, seed=9)),
], ids=["threshold", "direction", "random_mlp"])
def test_save_load_round_trip(tmp_path, p):
    path = tmp_path / "p.npz"
    save_partition(p, path)
    q = load_partition(path)
    assert type(q) is type(p) and q.alphabet_size == p.alphabet_size
    dim = p.input_dim or 2
    x = np.random.default_rng(0).uniform(-1.5, 1.5, (2000, dim))
    np.testing.assert_array_equal(q.apply_batch(x), p.apply_batch(x))


def test_henon_reference_partition():
    p = reference_partition("henon")
    assert isinstance(p, ThresholdPartition) and p.alphabet_size == 2
    assert p.apply([0.0, 0.0]) == 1 and p.apply([-0.5, 0.0]) == 0
    with pytest.raises((ValueError, FileNotFoundError, KeyError)):
        reference_partition("nonexistent")
