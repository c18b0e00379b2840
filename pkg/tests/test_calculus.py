import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cihj.calculus import Functional, check_non_anticipative, ci_derivative_fd, lphi_constant
from cihj.paths import GridPath, GridSpec, PathFamily, PointedPath
from cihj.penalty import slice_functional


def current(t, x):
    return float(x.at(t)[0])


def product(t, x):
    """x(t) * t, with ci-derivatives (x(t), t)."""
    return float(x.at(t)[0]) * x.spec.time(t)


def const_path(spec, c):
    return GridPath(spec, np.full((spec.n_nodes, spec.n), float(c)))


def test_constant_functional():
    spec = GridSpec(h=0.0, T=1.0, m_fut=4)
    d = ci_derivative_fd(Functional(lambda t, x: 3.0), PointedPath(1, const_path(spec, 1)))
    assert (d.dt, d.grad.tolist(), d.residual) == (0.0, [0.0], 0.0)


def test_product_converges():
    errs = []
    for m in (8, 16, 32, 64):
        spec = GridSpec(h=0.0, T=1.0, m_fut=m)
        d = ci_derivative_fd(Functional(product), PointedPath(m // 2, const_path(spec, 2.0)))
        errs.append(abs(d.dt - 2.0) + abs(d.grad[0] - 0.5))
    assert errs[-1] < 0.02
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_richardson_first_order():
    """With exact derivatives present, the error halves with the step."""
    F = Functional(product, exact_ci=lambda t, x: (x.at(t)[0], x.spec.time(t)))
    spec = GridSpec(h=0.0, T=1.0, m_fut=64)
    p = PointedPath(16, const_path(spec, 2.0))
    exact = F.ci(p.t_idx, p.path)
    e = [abs(ci_derivative_fd(F, p, step=k * spec.dt).dt - exact[0]) for k in (4, 2, 1)]
    assert e[1] == pytest.approx(e[0] / 2) and e[2] == pytest.approx(e[1] / 2)


def test_step_validation():
    spec = GridSpec(h=0.0, T=1.0, m_fut=4)
    p = PointedPath(1, const_path(spec, 0))
    F = Functional(current)
    with pytest.raises(ValueError):
        ci_derivative_fd(F, p, step=0.3)
    with pytest.raises(ValueError):
        ci_derivative_fd(F, PointedPath(4, p.path))
    with pytest.raises(ValueError):
        ci_derivative_fd(F, p, step=1.0)


def test_non_anticipative_checks(nine_family):
    spec = nine_family.spec
    pts = [PointedPath(t, p) for p in nine_family.paths for t in range(spec.m_fut + 1)]
    assert check_non_anticipative(Functional(current), pts) == 0
    terminal = Functional(lambda t, x: float(x.at(x.spec.m_fut)[0]), claims_non_anticipative=False)
    assert check_non_anticipative(terminal, pts) > 0
    anchor = PointedPath(1, nine_family.paths[4])
    assert check_non_anticipative(slice_functional(anchor, "left", 1.0), pts) == 0
    assert check_non_anticipative(slice_functional(anchor, "right", 1.0), pts) == 0


def test_lphi_examples(nine_family):
    assert lphi_constant(Functional(lambda t, x: 7.0), nine_family) == 0
    assert lphi_constant(Functional(current), nine_family) == 1
    assert lphi_constant(Functional(lambda t, x: x.spec.time(t)), nine_family) == 1


def test_lphi_rejects_big_probe(nine_family):
    with pytest.raises(ValueError):
        lphi_constant(Functional(current), nine_family, probes=[[2.0]])


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_lphi_subadditive(a, b, c):
    fam = PathFamily(GridSpec(h=0.0, T=1.0, m_fut=2), 1.0, [-1, 0, 1], [0])
    F = Functional(lambda t, x: a * float(x.at(t)[0]) ** 2 + b * x.spec.time(t))
    G = Functional(lambda t, x: c * float(x.at(t)[0]) * x.spec.time(t))
    S = Functional(lambda t, x: F(t, x) + G(t, x))
    assert lphi_constant(S, fam) <= lphi_constant(F, fam) + lphi_constant(G, fam) + 1e-9
