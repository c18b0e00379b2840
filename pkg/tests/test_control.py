import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cihj.calculus import check_non_anticipative, lphi_constant
from cihj.control import (
    BellmanData,
    Hamiltonian,
    PathNotInFamily,
    ProjectionDefectError,
    ValueTable,
    a2_growth,
    as_functional,
    bellman_h,
    bellman_hamiltonian,
    check_assumption_A2,
    check_assumption_A3,
    compile_expression,
    dpp_residual,
    problem_from_config,
    solve_dp,
    table_from_function,
)
from cihj.paths import GridPath, GridSpec, PathFamily, PointedPath, stop

from .conftest import closed_form_data


def closed_form(k, x):
    return float(x.at(k)[0]) - (x.spec.T - x.spec.time(k))


@pytest.fixture(scope="module")
def fam():
    return PathFamily(GridSpec(h=0.5, T=1.0, m_past=1, m_fut=4), 1.0, [-1, 0, 1], [0])


class TestBellmanH:
    def test_abs(self):
        data = closed_form_data()
        spec = GridSpec(h=0.0, T=1.0, m_fut=1)
        x = GridPath(spec, np.zeros((2, 1)))
        for s in (-2.0, -0.5, 0.0, 1.5):
            assert bellman_h(data, 0, x, [s]) == -abs(s)

    def test_constant_cost(self):
        data = BellmanData(((0.0,),), lambda k, x, u: np.zeros(1), lambda k, x, u: 3.0, lambda x: 0.0)
        x = GridPath(GridSpec(h=0.0, T=1.0, m_fut=1), np.zeros((2, 1)))
        assert bellman_h(data, 0, x, [5.0]) == 3.0

    def test_s_zero_gives_min_cost(self):
        data = BellmanData(((0.0,), (1.0,)), lambda k, x, u: np.ones(1), lambda k, x, u: 2.0 - u[0], lambda x: 0.0)
        x = GridPath(GridSpec(h=0.0, T=1.0, m_fut=1), np.zeros((2, 1)))
        assert bellman_h(data, 0, x, [0.0]) == 1.0

    def test_empty_controls(self):
        with pytest.raises(ValueError):
            BellmanData((), lambda *a: 0, lambda *a: 0, lambda x: 0)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 1))
    def test_concave(self, s1, s2, lam):
        data = BellmanData(
            ((-1.0,), (0.5,), (1.0,)),
            lambda k, x, u: u,
            lambda k, x, u: float(u[0]) ** 2 - float(x.at(k)[0]),
            lambda x: 0.0,
        )
        x = GridPath(GridSpec(h=0.0, T=1.0, m_fut=1), np.array([[0.0], [0.3]]))
        mid = bellman_h(data, 1, x, [lam * s1 + (1 - lam) * s2])
        assert mid >= lam * bellman_h(data, 1, x, [s1]) + (1 - lam) * bellman_h(data, 1, x, [s2]) - 1e-9


class TestSolve:
    def test_closed_form_exact(self, fam):
        table = solve_dp(closed_form_data(), fam)
        for k, path, value in table.entries():
            assert value == closed_form(k, path)
        assert dpp_residual(table, closed_form_data()) == 0.0

    def test_injected_closed_form(self, fam):
        assert dpp_residual(table_from_function(fam, closed_form), closed_form_data()) == 0.0

    def test_closed_form_solves_hj(self, fam):
        # ci-derivatives (1, 1) and H(s) = -|s| give dt + H = 0
        H = bellman_hamiltonian(closed_form_data())
        for k in range(fam.spec.m_fut):
            for p in fam.paths[:20]:
                assert 1.0 + H(k, p, [1.0]) == 0.0

    def test_no_dynamics(self, fam):
        term = lambda x: float(np.max(x.samples))  # noqa: E731
        data = BellmanData(((0.0,),), lambda k, x, u: np.zeros(1), lambda k, x, u: 0.0, term)
        table = solve_dp(data, fam)
        for k, path, value in table.entries():
            assert value == term(stop(path, k))

    def test_non_anticipative(self, fam):
        F = as_functional(solve_dp(closed_form_data(), fam))
        pts = [PointedPath(k, p) for p in fam.paths for k in range(fam.spec.m_fut + 1)]
        assert check_non_anticipative(F, pts) == 0.0

    def test_perturbed_residual(self, fam):
        table = solve_dp(closed_form_data(), fam)
        bumped = table.perturbed(2, fam.paths[5], 1.0)
        assert dpp_residual(bumped, closed_form_data()) >= 1.0 - 1e-12

    def test_monotone_in_terminal(self, fam):
        lo = solve_dp(closed_form_data(), fam).as_array()
        hi_data = BellmanData(((-1.0,), (1.0,)), lambda k, x, u: u, lambda k, x, u: 0.0, lambda x: float(x.at(x.spec.m_fut)[0]) + abs(float(x.samples[0, 0])) + 0.25)
        assert np.all(solve_dp(hi_data, fam).as_array() >= lo)

    def test_repeatable(self, fam):
        a, b = solve_dp(closed_form_data(), fam), solve_dp(closed_form_data(), fam)
        assert np.array_equal(a.as_array(), b.as_array())

    def test_projection_defect(self, fam):
        data = BellmanData(((0.4,),), lambda k, x, u: u, lambda k, x, u: 0.0, lambda x: 0.0)
        with pytest.raises(ProjectionDefectError):
            solve_dp(data, fam)
        table = solve_dp(data, fam, defect_tol=1.0)
        assert table.max_defect == pytest.approx(0.4 * fam.spec.dt)

    def test_lphi_finite(self, fam):
        table = solve_dp(closed_form_data(), fam)
        assert lphi_constant(as_functional(table), fam) == 2.0


class TestTable:
    def test_lookup(self, fam):
        table = solve_dp(closed_form_data(), fam)
        F = as_functional(table)
        p = fam.paths[7]
        assert F(2, p) == closed_form(2, p)
        assert F(2, stop(p, 2)) == F(2, p)
        alien = GridPath(fam.spec, np.full((fam.spec.n_nodes, 1), 0.3))
        with pytest.raises(PathNotInFamily):
            F(1, alien)

    def test_csv_roundtrip(self, fam, tmp_path):
        table = solve_dp(closed_form_data(), fam)
        table.to_csv(tmp_path / "v.csv")
        again = ValueTable.from_csv(fam, tmp_path / "v.csv")
        assert np.array_equal(again.as_array(), table.as_array())


class TestAssumptions:
    def test_path_independent(self, fam):
        H = Hamiltonian(lambda t, x, s: -abs(s[0]))
        assert check_assumption_A2(H, fam, [[-2.0], [0.0], [3.0]]) == 0.0
        assert set(check_assumption_A3(H, fam, [1.0, 2.0]).values()) == {0.0}

    def test_lipschitz_bellman(self, fam):
        data = BellmanData(((-1.0,), (1.0,)), lambda k, x, u: u, lambda k, x, u: float(x.at(k)[0]), lambda x: 0.0)
        H = bellman_hamiltonian(data)
        assert 0 < check_assumption_A2(H, fam, [[-2.0], [0.0], [3.0]]) <= 1.0
        for R, c in check_assumption_A3(H, fam, [1.0, 2.0]).items():
            assert c <= 1.0 + R

    def test_quadratic_growth_flagged(self, fam):
        H = Hamiltonian(lambda t, x, s: float(s @ s) * float(x.at(t)[0]))
        rep = a2_growth(H, fam, radii=(1.0, 2.0, 4.0))
        assert rep.growing
        a3 = check_assumption_A3(H, fam, [1.0, 2.0, 4.0])
        assert all(np.isfinite(v) for v in a3.values())


class TestExpressions:
    def test_names(self):
        spec = GridSpec(h=1.0, T=1.0, m_past=1, m_fut=2)
        x = GridPath(spec, np.array([[3.0], [-1.0], [2.0], [0.5]]))
        assert compile_expression("x")(x, 1) == 2.0
        assert compile_expression("xd")(x, 2) == -1.0
        assert compile_expression("sup")(x, 1) == 3.0
        assert compile_expression("max(x, 0) + abs(xd) * t")(x, 2) == 0.5 + 1.0 * 1.0

    @pytest.mark.parametrize("bad", ["__import__('os')", "x.real", "[x]", "y + 1"])
    def test_rejects(self, bad):
        spec = GridSpec(h=0.0, T=1.0, m_fut=1)
        x = GridPath(spec, np.zeros((2, 1)))
        with pytest.raises(ValueError):
            compile_expression(bad)(x, 0)

    def test_problem_config(self, fam):
        doc = {"controls": [{"u": [-1.0], "f": {"c": [-1.0]}, "g": 0.0}, {"u": [1.0], "f": {"c": [1.0]}, "g": "0"}], "terminal": "x"}
        data = problem_from_config(doc, 1)
        table = solve_dp(data, fam)
        for k, path, value in table.entries():
            assert value == closed_form(k, path)

    def test_delay_dynamics(self):
        doc = {"controls": [{"u": [0.0], "f": {"Ad": [[1.0]]}}], "terminal": "x"}
        data = problem_from_config(doc, 1)
        spec = GridSpec(h=1.0, T=1.0, m_past=1, m_fut=1)
        x = GridPath(spec, np.array([[0.5], [0.0], [0.0]]))
        assert data.f(0, x, np.zeros(1)).tolist() == [0.5]
