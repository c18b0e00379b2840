import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cihj.paths import GridPath, GridSpec, PathFamily, PointedPath, stop
from cihj.penalty import (
    PenaltyConsistencyError,
    _geometry,
    check_derivative_bounds,
    check_lower_bounds,
    is_diagonal,
    penalty_parts,
    slice_functional,
    v1,
    v2,
    v3,
    vL,
)
from cihj.suite import naive_exhibit, penalty_suite


def line(spec, values):
    return GridPath(spec, np.asarray(values, dtype=float).reshape(-1, 1))


@pytest.fixture
def offset_pair():
    """x = 2, y = 0 on [-1, 1]; t = 1, tau = 0."""
    spec = GridSpec(h=1.0, T=1.0, m_past=1, m_fut=1)
    return line(spec, [2, 2, 2]), line(spec, [0, 0, 0])


@pytest.fixture
def history_pair():
    """x = 0, y(0) = 3, y(1) = 0; t = tau = 1."""
    spec = GridSpec(h=0.0, T=1.0, m_fut=1)
    return line(spec, [0, 0]), line(spec, [3, 0])


class TestHandValues:
    def test_v1(self, offset_pair):
        x, y = offset_pair
        e = v1(1, x, 0, y, 1.0)
        assert (e.V, e.P, e.Q.tolist()) == (11.0, 6.0, [8.0])

    def test_v1_zero(self, offset_pair):
        x, _ = offset_pair
        e = v1(1, x, 1, x, 1.0)
        assert (e.V, e.P, e.Q.tolist()) == (0.0, 0.0, [0.0])

    def test_v2(self, offset_pair, history_pair):
        assert v2(1, *offset_pair[:1], 0, offset_pair[1], 1.0) == 11.0
        x, y = history_pair
        assert v2(1, x, 1, y, 0.0) == 9.0

    def test_v3(self, history_pair, offset_pair):
        x, y = history_pair
        e = v3(1, x, 1, y, 0.0)
        assert (e.V, e.P, e.Q.tolist()) == (9.0, 0.0, [0.0])
        x, y = offset_pair
        e = v3(1, x, 0, y, 1.0)  # V2 == V1 branch
        assert (e.V, e.P, e.Q.tolist()) == (0.0, 0.0, [0.0])

    def test_vL(self, offset_pair, history_pair):
        x, y = offset_pair
        e = vL(1, x, 0, y, 1.0)
        assert (e.V, e.P, e.Q.tolist()) == (22.0, 12.0, [16.0])
        assert e.V == 11.0 + 121.0 / 11.0
        x, y = history_pair
        e = vL(1, x, 1, y, 0.0)
        assert (e.V, e.P, e.Q.tolist()) == (9.0, 0.0, [0.0])

    def test_diagonal(self, offset_pair):
        x, _ = offset_pair
        e = vL(1, x, 1, x, 3.0)
        assert (e.V, e.P, e.Q.tolist()) == (0.0, 0.0, [0.0])

    def test_bounds_tight(self, history_pair, offset_pair):
        x, y = history_pair
        lb = check_lower_bounds(1, x, 1, y, 0.0)
        assert lb.applicable and lb.passed and lb.margin_sup == 0.0 and lb.margin_time == 9.0
        x, y = offset_pair
        db = check_derivative_bounds(1, x, 0, y, 1.0)
        assert db.passed and db.margin_P == 0.0 and db.margin_Q == 0.0

    def test_slice_exact(self, offset_pair):
        x, y = offset_pair
        left = slice_functional(PointedPath(0, y), "left", 1.0)
        assert left.valid_at(1, x)
        P, Q = left.ci(1, x)
        assert (P, Q.tolist()) == (12.0, [16.0])
        diag = slice_functional(PointedPath(0, x), "left", 1.0)
        assert diag.valid_at(0, x)
        P, Q = diag.ci(0, x)
        assert (P, Q.tolist()) == (0.0, [0.0])

    def test_bad_side(self, offset_pair):
        with pytest.raises(ValueError):
            slice_functional(PointedPath(0, offset_pair[0]), "middle", 1.0)


def test_lower_bound_not_applicable():
    spec = GridSpec(h=0.0, T=1.0, m_fut=2)
    jumpy = line(spec, [0, 5, 0])
    res = check_lower_bounds(0, line(spec, [0, 0, 0]), 2, jumpy, 1.0)
    assert not res.applicable and res.condition == "not applicable"


def test_spec_mismatch():
    a = line(GridSpec(h=0.0, T=1.0, m_fut=1), [0, 0])
    b = line(GridSpec(h=0.0, T=1.0, m_fut=2), [0, 0, 0])
    with pytest.raises(ValueError):
        vL(0, a, 0, b, 1.0)


def test_near_diagonal_no_nan():
    p = penalty_parts(0.0, np.array([0.0]), 1e-320, False, 1.0)
    assert np.isfinite(p["VL"]) and p["V3"] <= p["V2"]
    assert np.isnan(p["direct"])


def test_cross_check_error_type():
    assert issubclass(PenaltyConsistencyError, ArithmeticError)


def test_suite_on_nine_paths(nine_family):
    res = penalty_suite(nine_family)
    assert res.passed
    assert res.quadruples == (9 * 3) ** 2


def test_continuity_at_diagonal():
    """x_k deviates by 2 a_k in the prehistory and t_k = a_k: V3, P3 -> 0 like a_k^2, a_k."""
    spec = GridSpec(h=1.0, T=1.0, m_past=1, m_fut=64)
    y = GridPath(spec, np.zeros((spec.n_nodes, 1)))
    anchor = 0
    vals = []
    for j in range(7):
        a = 2.0**-j
        s = np.zeros((spec.n_nodes, 1))
        s[0, 0] = 2 * a
        e = v3(int(64 * a), GridPath(spec, s), anchor, y, 1.0)
        vals.append((e.V, abs(e.P), float(np.linalg.norm(e.Q))))
        assert e.V == pytest.approx(a * a / 4)
    for (V0, P0, Q0), (V1_, P1_, Q1_) in zip(vals, vals[1:]):
        assert V1_ < V0 and P1_ < P0 and Q1_ <= Q0
    assert vals[-1][0] < 1e-4 and vals[-1][1] < 0.05


def test_naive_exhibit():
    ex = naive_exhibit()
    assert min(ex.naive_residuals) > 0.1
    assert ex.penalty_residuals[-1] < 0.01
    assert list(ex.penalty_residuals) == sorted(ex.penalty_residuals, reverse=True)


# -- properties over random pairs ------------------------------------------------------

SPEC = GridSpec(h=0.5, T=1.0, n=2, m_past=2, m_fut=4)
vals = st.floats(-4, 4, allow_nan=False, allow_infinity=False)
path_st = st.lists(st.tuples(vals, vals), min_size=SPEC.n_nodes, max_size=SPEC.n_nodes).map(lambda v: GridPath(SPEC, np.array(v)))
node_st = st.integers(0, SPEC.m_fut)
L_st = st.sampled_from([0.0, 0.5, 1.0, 2.0])


@given(path_st, node_st, path_st, node_st, L_st)
def test_nonnegative_and_estimates(x, t, y, tau, L):
    e1, e3, eL = v1(t, x, tau, y, L), v3(t, x, tau, y, L), vL(t, x, tau, y, L)
    V2 = v2(t, x, tau, y, L)
    assert min(e1.V, V2, e3.V, eL.V) >= 0
    assert e3.V <= V2 * (1 + 1e-15)
    assert abs(e3.P) <= 2 * abs(e1.P) * (1 + 1e-15)
    assert np.linalg.norm(e3.Q) <= 2 * np.linalg.norm(e1.Q) * (1 + 1e-15)
    assert check_derivative_bounds(t, x, tau, y, L).passed


@given(path_st, node_st, path_st, node_st, L_st)
def test_symmetry(x, t, y, tau, L):
    a, b = vL(t, x, tau, y, L), vL(tau, y, t, x, L)
    assert a.V == pytest.approx(b.V, rel=4 * np.finfo(float).eps, abs=0)
    assert a.P == -b.P and np.array_equal(a.Q, -b.Q)
    c, d = v1(t, x, tau, y, L), v1(tau, y, t, x, L)
    assert c.P == -d.P and np.array_equal(c.Q, -d.Q)


@given(path_st, node_st, path_st, node_st, L_st)
def test_non_anticipative(x, t, y, tau, L):
    a, b = vL(t, x, tau, y, L), vL(t, stop(x, t), tau, stop(y, tau), L)
    assert a.V == b.V and a.P == b.P and np.array_equal(a.Q, b.Q)


lattice = st.integers(-32, 32).map(lambda k: k / 8)
lattice_path_st = st.lists(st.tuples(lattice, lattice), min_size=SPEC.n_nodes, max_size=SPEC.n_nodes).map(
    lambda v: GridPath(SPEC, np.array(v))
)


@given(lattice_path_st, node_st, lattice_path_st, node_st, L_st)
def test_zero_characterization(x, t, y, tau, L):
    # exact on lattice data; differences near 1e-160 would underflow when squared
    assert (vL(t, x, tau, y, L).V == 0) == is_diagonal(t, x, tau, y)
    assert vL(t, x, t, stop(x, t), L).V == 0


@given(path_st, node_st, path_st, node_st, L_st)
def test_two_forms(x, t, y, tau, L):
    p = penalty_parts(*_geometry(t, x, tau, y), L)
    if np.isfinite(p["direct"]):
        assert abs(p["VL"] - p["direct"]) <= 1e-12 * abs(p["direct"])


SLOPE_FAMILY = PathFamily(GridSpec(h=0.5, T=1.0, m_past=2, m_fut=4), 1.0, [-1, 0, 1], [0])


@given(st.integers(0, 10**6), node_st, node_st)
def test_lower_bounds_on_slope_family(seed, t, tau):
    fam = SLOPE_FAMILY
    rng = np.random.default_rng(seed)
    x, y = (fam.paths[i] for i in rng.integers(len(fam), size=2))
    res = check_lower_bounds(t, x, tau, y, 1.0)
    assert res.applicable and res.passed
