"""Doubling of variables on a finite path family.

The comparison argument for sub/supersolutions phi1, phi2 maximizes

    Phi(t, x, tau, y) = phi1(t, x) - [phi2(tau, y) + alpha (2T - t - tau)
                        + (t - tau)^2 / delta + V^L(t, x, tau, y) / eps]

over the product of the family with itself. Every estimate used between the
choice of alpha and the contradiction inequality is recomputed at the exact
grid maximizer, so a negative margin points at an implementation bug rather
than at the inputs.

Functionals enter as tables of shape ``(m_fut + 1, n_paths)`` (see
:func:`tabulate`); evaluation order of the bracket above is shared with the
test functional psi1 so that ``phi1 - psi1`` reproduces Phi bit for bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .calculus import Functional, lphi_constant
from .control import Hamiltonian, ValueTable, as_functional
from .paths import PathFamily, PointedPath, lip_extension, path_key, stop, sup_sq_upto
from .penalty import PairGeometry, slice_functional, vL

EPS = np.finfo(float).eps
MARGIN_ULPS = 8
LEDGER_ULPS = 4


class BoundaryViolation(ValueError):
    """phi1(T, x) > phi2(T, x) for some family member."""

    def __init__(self, message, worst: float, member: int):
        super().__init__(message)
        self.worst = worst
        self.member = member


class NotInterior(ValueError):
    """Test functionals requested at a maximizer with t = T or tau = T."""


# -- configuration -----------------------------------------------------------


def validate_schedule(schedule) -> tuple:
    pts = tuple((float(e), float(d)) for e, d in schedule)
    if not pts:
        raise ValueError("schedule must not be empty")
    for e, d in pts:
        if not (e > 0 and d > 0 and math.isfinite(e) and math.isfinite(d)):
            raise ValueError(f"schedule entries must be positive and finite, got {(e, d)}")
    for (e0, d0), (e1, d1) in zip(pts, pts[1:]):
        if not (e1 < e0 and d1 < d0):
            raise ValueError("schedule must be strictly decreasing in both epsilon and delta")
    return pts


@dataclass(frozen=True)
class DoublingConfig:
    """One (epsilon, delta) point with alpha and the penalty slope L."""

    epsilon: float
    delta: float
    alpha: float
    L: float
    schedule: tuple = ()

    def __post_init__(self):
        if not (self.epsilon > 0 and self.delta > 0):
            raise ValueError("epsilon and delta must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.schedule:
            object.__setattr__(self, "schedule", validate_schedule(self.schedule))

    def at(self, epsilon: float, delta: float) -> "DoublingConfig":
        return DoublingConfig(epsilon, delta, self.alpha, self.L, self.schedule)


def tabulate(F, family: PathFamily) -> np.ndarray:
    """Values of F at every (node, member), shape ``(m_fut + 1, len(family))``.

    ``F`` may be a :class:`Functional`, a :class:`ValueTable` or an array
    of the right shape. Non-anticipative functionals are evaluated once per
    distinct stopped history.
    """
    spec = family.spec
    shape = (spec.m_fut + 1, len(family))
    if isinstance(F, np.ndarray):
        if F.shape != shape:
            raise ValueError(f"table has shape {F.shape}, expected {shape}")
        return np.asarray(F, dtype=float)
    if isinstance(F, ValueTable):
        return F.as_array()
    out = np.empty(shape)
    for k in range(shape[0]):
        i = spec.node(k)
        cache = {}
        for p, (path, s) in enumerate(zip(family.paths, family.array)):
            if F.claims_non_anticipative:
                key = path_key(s[: i + 1])
                if key not in cache:
                    cache[key] = F(k, path)
                out[k, p] = cache[key]
            else:
                out[k, p] = F(k, path)
    return out


def _as_functional(F, family: PathFamily, values: np.ndarray) -> Functional:
    if isinstance(F, Functional):
        return F
    if isinstance(F, ValueTable):
        return as_functional(F)
    index = family._index

    def ev(t, x):
        return values[t, index[x.key]]

    return Functional(ev, None, True, name="tabulated")


# -- Phi and its maximizer ------------------------------------------------------


def _bracket(phi2_val, alpha, T, t, tau, delta, V, eps):
    """phi2 + alpha (2T - t - tau) + (t - tau)^2 / delta + V / eps, left to right."""
    return phi2_val + alpha * (2 * T - t - tau) + (t - tau) ** 2 / delta + V / eps


def phi_eps_delta(phi1, phi2, cfg: DoublingConfig, left: PointedPath, right: PointedPath) -> float:
    """Phi at a single quadruple; phi1, phi2 are callables (t_idx, path) -> value."""
    spec = left.path.spec
    t, tau = left.time, right.time
    V = vL(left.t_idx, left.path, right.t_idx, right.path, cfg.L).V
    return float(
        phi1(left.t_idx, left.path)
        - _bracket(phi2(right.t_idx, right.path), cfg.alpha, spec.T, t, tau, cfg.delta, V, cfg.epsilon)
    )


@dataclass(frozen=True)
class Maximizer:
    t_idx: int
    x: PointedPath
    tau_idx: int
    y: PointedPath
    value: float
    ties: int
    x_index: int
    y_index: int

    def to_dict(self) -> dict:
        return dict(
            t_idx=self.t_idx,
            tau_idx=self.tau_idx,
            t=self.x.time,
            tau=self.y.time,
            x_index=self.x_index,
            y_index=self.y_index,
            value=self.value,
            ties=self.ties,
        )


class ProductSweep:
    """Cached pair geometry of a family with itself for repeated Phi sweeps."""

    def __init__(self, family: PathFamily):
        family.check_cap()
        self.family = family
        self.geometry = PairGeometry(family.spec, family.array, family.array)

    def phi_slab(self, F1, F2, cfg: DoublingConfig, t_idx: int) -> np.ndarray:
        """Phi over (x, tau, y) for fixed t, shape ``(P, K, P)``."""
        spec = self.family.spec
        K, P = F1.shape
        t = spec.time(t_idx)
        out = np.empty((P, K, P))
        for k in range(K):
            tau = spec.time(k)
            V = self.geometry.block(t_idx, k, cfg.L)["VL"]
            out[:, k, :] = F1[t_idx][:, None] - _bracket(
                F2[k][None, :], cfg.alpha, spec.T, t, tau, cfg.delta, V, cfg.epsilon
            )
        return out


def maximize_phi(phi1, phi2, family: PathFamily, cfg: DoublingConfig, threads: int = 1, sweep=None) -> Maximizer:
    """Exhaustive argmax of Phi, first in lexicographic (t, x, tau, y) order; ties counted."""
    F1, F2 = tabulate(phi1, family), tabulate(phi2, family)
    sweep = sweep or ProductSweep(family)
    K, P = F1.shape

    def one(t_idx):
        slab = sweep.phi_slab(F1, F2, cfg, t_idx)
        flat = int(np.argmax(slab))
        best = slab.flat[flat]
        return best, int(np.count_nonzero(slab == best)), np.unravel_index(flat, slab.shape)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(K)))
    else:
        results = [one(t) for t in range(K)]

    best_t = max(range(K), key=lambda t: (results[t][0], -t))
    value = results[best_t][0]
    ties = sum(r[1] for r in results if r[0] == value)
    xi, tau_idx, yi = (int(v) for v in results[best_t][2])
    paths = family.paths
    return Maximizer(
        best_t,
        PointedPath(best_t, paths[xi]),
        tau_idx,
        PointedPath(tau_idx, paths[yi]),
        float(value),
        int(ties),
        xi,
        yi,
    )


# -- moduli and proof estimates ---------------------------------------------------


@dataclass(frozen=True)
class Modulus:
    """Discrete modulus of continuity as a right-continuous step function."""

    thresholds: np.ndarray
    values: np.ndarray

    def __call__(self, theta: float) -> float:
        i = int(np.searchsorted(self.thresholds, theta, side="right")) - 1
        return 0.0 if i < 0 else float(self.values[i])


def path_distances(family: PathFamily) -> np.ndarray:
    X = family.array
    diff = X[:, None] - X[None, :]
    return np.max(np.sqrt(np.sum(diff * diff, axis=-1)), axis=-1)


def modulus(F: np.ndarray, family: PathFamily, D: Optional[np.ndarray] = None) -> Modulus:
    """omega(theta) = max |F(t,x) - F(tau,y)| over |t - tau| + ||x - y|| <= theta."""
    spec = family.spec
    D = path_distances(family) if D is None else D
    times = spec.times[spec.zero :]
    ds, vs = [], []
    for a in range(F.shape[0]):
        for k in range(a, F.shape[0]):
            ds.append((abs(times[a] - times[k]) + D).ravel())
            vs.append(np.abs(F[a][:, None] - F[k][None, :]).ravel())
    d = np.concatenate(ds)
    v = np.concatenate(vs)
    order = np.argsort(d, kind="stable")
    d, v = d[order], np.maximum.accumulate(v[order])
    last = np.r_[d[1:] != d[:-1], True]
    return Modulus(d[last], v[last])


def eps_star(w1: Modulus, w2: Modulus, b: float, c: float, iters: int = 200) -> float:
    """Largest eps (by bisection) with max(w1, w2)(2 sqrt(c eps)) <= b / 4.

    Returns ``inf`` when the moduli never exceed b / 4 on the family.
    """

    def ok(eps):
        th = 2.0 * math.sqrt(c * eps)
        return max(w1(th), w2(th)) <= b / 4

    top = max(w1.thresholds[-1], w2.thresholds[-1])
    if max(w1.values[-1], w2.values[-1]) <= b / 4:
        return math.inf
    lo, hi = 0.0, (top / 2) ** 2 / c * 4 + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


@dataclass(frozen=True)
class Estimate:
    lhs: float
    rhs: float
    margin: float
    passed: bool


def _estimate(lhs: float, rhs: float) -> Estimate:
    """Check lhs <= rhs allowing MARGIN_ULPS of rounding at the operands' scale."""
    margin = rhs - lhs
    tol = MARGIN_ULPS * EPS * max(abs(lhs), abs(rhs))
    return Estimate(float(lhs), float(rhs), float(margin), bool(margin >= -tol))


@dataclass(frozen=True)
class Bounds:
    """Quantities fixed by the pair (phi1, phi2) and the family."""

    b: float
    c: float
    alpha: float
    omega1: Modulus
    omega2: Modulus
    eps_star: float
    T: float


def pair_bounds(F1: np.ndarray, F2: np.ndarray, family: PathFamily) -> Bounds:
    T = family.spec.T
    b = float(np.max(F1 - F2))
    c = float(np.max(F1) - np.min(F2))
    D = path_distances(family)
    w1, w2 = modulus(F1, family, D), modulus(F2, family, D)
    alpha = b / (4 * T) if b > 0 else 0.0
    es = eps_star(w1, w2, b, c) if b > 0 else math.inf
    return Bounds(b, c, alpha, w1, w2, es, T)


def proof_estimates(F1: np.ndarray, F2: np.ndarray, family: PathFamily, cfg: DoublingConfig, m: Maximizer, bounds: Bounds) -> dict:
    """Named estimates from the choice of alpha to interiority at the maximizer."""
    spec = family.spec
    b, c, a = bounds.b, bounds.c, bounds.alpha
    eps, dlt = cfg.epsilon, cfg.delta
    t, tau = m.x.time, m.y.time
    xs, ys = stop(m.x.path, m.t_idx), stop(m.y.path, m.tau_idx)
    sup_sq = sup_sq_upto(xs, ys, spec.m_fut)
    V = vL(m.t_idx, m.x.path, m.tau_idx, m.y.path, cfg.L).V
    f1 = lambda k, i: float(F1[k, i])  # noqa: E731
    f2 = lambda k, i: float(F2[k, i])  # noqa: E731
    xi, yi = m.x_index, m.y_index
    r = 2.0 * math.sqrt(c * eps)
    w1, w2 = bounds.omega1, bounds.omega2

    est = {
        "half_b_below_max": _estimate(b / 2, m.value),
        "time_gap_delta": _estimate((t - tau) ** 2, c * dlt),
        "penalty_eps": _estimate(V, c * eps),
        "stopped_dist_eps": _estimate(sup_sq, c * eps),
        "time_gap_eps": _estimate((t - tau) ** 2, c * eps),
        "penalty_vs_phi2": _estimate(V / eps, f2(m.t_idx, xi) - f2(m.tau_idx, yi) + a * (tau - t)),
        "phi1_modulus": _estimate(abs(f1(m.t_idx, xi) - f1(m.tau_idx, yi)), w1(r)),
        "phi2_modulus": _estimate(abs(f2(m.t_idx, xi) - f2(m.tau_idx, yi)), w2(r)),
        "improved_dist": _estimate(sup_sq / eps, w2(r) + a * math.sqrt(c) * math.sqrt(eps)),
        "terminal_chain_t": _estimate(b / 2, w1(spec.T - t) + w2(spec.T - t) + w2(r)),
        "terminal_chain_tau": _estimate(b / 2, w1(spec.T - tau) + w2(spec.T - tau) + w1(r)),
    }
    return est


# -- test functionals ------------------------------------------------------------


@dataclass(frozen=True)
class DerivativeLedger:
    dt_psi1: float
    dtau_psi2: float
    identity_error: float
    identity_ulps: float
    identity_ok: bool
    grad_psi1: np.ndarray
    grad_psi2: np.ndarray
    gradient_equal: bool
    gradient_bound: Estimate
    slices_valid: bool
    touching_max_margin: Optional[float] = None
    touching_min_margin: Optional[float] = None


def test_functionals(m: Maximizer, cfg: DoublingConfig, phi1_value: float, phi2_value: float):
    """psi1 in (t, x), psi2 in (tau, y) frozen at the maximizer, plus the derivative ledger.

    ``phi1_value`` and ``phi2_value`` are phi1 at the left and phi2 at the
    right point of the maximizer.
    """
    spec = m.x.path.spec
    if m.t_idx >= spec.m_fut or m.tau_idx >= spec.m_fut:
        raise NotInterior(f"maximizer at t_idx={m.t_idx}, tau_idx={m.tau_idx} touches the horizon")
    a, dlt, eps, T = cfg.alpha, cfg.delta, cfg.epsilon, spec.T
    that, tauhat = m.x.time, m.y.time
    left = slice_functional(m.y, "left", cfg.L)
    right = slice_functional(m.x, "right", cfg.L)

    def psi1(t_idx, x):
        return _bracket(phi2_value, a, T, spec.time(t_idx), tauhat, dlt, left(t_idx, x), eps)

    def psi1_ci(t_idx, x):
        t = spec.time(t_idx)
        P, Q = left.ci(t_idx, x)
        return -a + 2 * (t - tauhat) / dlt + P / eps, Q / eps

    def psi2(tau_idx, y):
        tau = spec.time(tau_idx)
        return phi1_value - a * (2 * T - that - tau) - (that - tau) ** 2 / dlt - right(tau_idx, y) / eps

    def psi2_ci(tau_idx, y):
        tau = spec.time(tau_idx)
        mP, mQ = right.ci(tau_idx, y)
        return a + 2 * (that - tau) / dlt - mP / eps, -mQ / eps

    f1 = Functional(psi1, psi1_ci, True, left.ci_valid, name="psi1")
    f2 = Functional(psi2, psi2_ci, True, right.ci_valid, name="psi2")

    d1, g1 = f1.ci(m.t_idx, m.x.path)
    d2, g2 = f2.ci(m.tau_idx, m.y.path)
    err = abs((d1 - d2) + 2 * a)
    scale = max(abs(d1), abs(d2), 2 * a)
    ulps = err / (EPS * scale) if scale > 0 else 0.0
    gap = float(np.linalg.norm(m.x.path.at(m.t_idx) - m.y.path.at(m.tau_idx)))
    ledger = DerivativeLedger(
        d1,
        d2,
        err,
        ulps,
        bool(ulps <= LEDGER_ULPS),
        g1,
        g2,
        bool(np.array_equal(g1, g2)),
        _estimate(float(np.linalg.norm(g1)), 8 * gap / eps),
        bool(f1.valid_at(m.t_idx, m.x.path) and f2.valid_at(m.tau_idx, m.y.path)),
    )
    return f1, f2, ledger


test_functionals.__test__ = False  # not a pytest test


def touching_margins(psi1: Functional, psi2: Functional, F1: np.ndarray, F2: np.ndarray, family: PathFamily, m: Maximizer):
    """Sweep phi1 - psi1 (max at the left point) and phi2 - psi2 (min at the right point).

    Returns the two margins ``(top - max over the family, min over the family
    - bottom)``; both are 0 when the maximizer touches.
    """
    spec = family.spec
    paths = family.paths
    K, P = F1.shape
    d1 = np.empty((K, P))
    d2 = np.empty((K, P))
    for k in range(K):
        for i in range(P):
            d1[k, i] = F1[k, i] - psi1(k, paths[i])
            d2[k, i] = F2[k, i] - psi2(k, paths[i])
    top = d1[m.t_idx, m.x_index]
    bottom = d2[m.tau_idx, m.y_index]
    return float(top - np.max(d1)), float(np.min(d2) - bottom)


# -- derivative bounds for touching test functionals --------------------------------


@dataclass(frozen=True)
class LemmaCheck:
    touching: bool
    lphi: float
    exact_margin: float
    discrete_margin: float
    passed: bool


def lemma_bounds(
    phi,
    psi: Functional,
    p: PointedPath,
    side: str,
    family: PathFamily,
    probes: Optional[Sequence] = None,
    lphi: Optional[float] = None,
    touch_tol: float = 0.0,
) -> LemmaCheck:
    """dt psi + <grad psi, v> >= -L_phi (side "sub") or <= L_phi ("super") for probes v.

    The touching precondition (phi - psi maximal, resp. minimal, at p over the
    family) is verified first. ``exact_margin`` uses psi's exact ci-derivatives;
    ``discrete_margin`` uses one-step quotients along the same extensions and
    is the grid statement that holds without any smoothness.
    """
    if side not in ("sub", "super"):
        raise ValueError("side must be 'sub' or 'super'")
    spec = family.spec
    if p.t_idx >= spec.m_fut:
        raise ValueError("the bound concerns points with t < T")
    F = tabulate(phi, family)
    phi_f = _as_functional(phi, family, F)
    paths = family.paths
    diff = np.array([[F[k, i] - psi(k, paths[i]) for i in range(len(paths))] for k in range(F.shape[0])])
    here = phi_f(p.t_idx, p.path) - psi(p.t_idx, p.path)
    if side == "sub":
        touching = bool(here >= np.max(diff) - touch_tol)
    else:
        touching = bool(here <= np.min(diff) + touch_tol)
    if not touching:
        raise ValueError("touching precondition fails at the given point")

    if probes is None:
        probes = [np.array(v) for v in family.future_alphabet if np.linalg.norm(v) <= 1 + 1e-12]
    probes = [np.atleast_1d(np.asarray(v, dtype=float)) for v in probes]
    if lphi is None:
        lphi = lphi_constant(phi_f, family, probes)
    dt, grad = psi.ci(p.t_idx, p.path)
    sign = 1.0 if side == "sub" else -1.0
    exact = min(sign * (dt + float(grad @ v)) + lphi for v in probes)
    h = spec.dt
    base = psi(p.t_idx, p.path)
    disc = min(sign * (psi(p.t_idx + 1, lip_extension(p.t_idx, p.path, v)) - base) / h + lphi for v in probes)
    return LemmaCheck(touching, float(lphi), float(exact), float(disc), bool(exact >= 0))


# -- verdict -------------------------------------------------------------------------


HOLDS = "comparison-holds"
CONTRADICTION = "contradiction-detected"
INCONCLUSIVE = "inconclusive"


@dataclass
class SchedulePoint:
    epsilon: float
    delta: float
    maximizer: Maximizer
    estimates: dict
    below_eps_star: bool
    interior: tuple
    ledger: Optional[DerivativeLedger] = None
    hamiltonian_gap: Optional[float] = None
    gap_flag: bool = False

    @property
    def estimates_ok(self) -> bool:
        return all(e.passed for e in self.estimates.values())

    @property
    def interior_ok(self) -> bool:
        """Interiority is only guaranteed for eps up to eps_*."""
        return all(self.interior) or not self.below_eps_star

    @property
    def ledger_ok(self) -> bool:
        if self.ledger is None:
            return True
        lg = self.ledger
        return (
            lg.identity_ok
            and lg.gradient_equal
            and lg.gradient_bound.passed
            and (lg.touching_max_margin is None or lg.touching_max_margin >= 0)
            and (lg.touching_min_margin is None or lg.touching_min_margin >= -_touch_tol(lg))
        )

    def to_dict(self) -> dict:
        out = dict(
            epsilon=self.epsilon,
            delta=self.delta,
            maximizer=self.maximizer.to_dict(),
            estimates={k: dict(lhs=e.lhs, rhs=e.rhs, margin=e.margin, passed=e.passed) for k, e in self.estimates.items()},
            below_eps_star=self.below_eps_star,
            interior=list(self.interior),
            hamiltonian_gap=self.hamiltonian_gap,
            gap_flag=self.gap_flag,
        )
        if self.ledger is not None:
            lg = self.ledger
            out["ledger"] = dict(
                dt_psi1=lg.dt_psi1,
                dtau_psi2=lg.dtau_psi2,
                identity_error=lg.identity_error,
                identity_ulps=lg.identity_ulps,
                identity_ok=lg.identity_ok,
                grad_psi1=[float(v) for v in lg.grad_psi1],
                gradient_equal=lg.gradient_equal,
                gradient_bound_margin=lg.gradient_bound.margin,
                gradient_bound_ok=lg.gradient_bound.passed,
                slices_valid=lg.slices_valid,
                touching_max_margin=lg.touching_max_margin,
                touching_min_margin=lg.touching_min_margin,
            )
        return out


def _touch_tol(lg: DerivativeLedger) -> float:
    # phi2 - psi2 is not assembled in the same order as Phi; allow rounding.
    return MARGIN_ULPS * EPS * max(1.0, abs(lg.dt_psi1), abs(lg.dtau_psi2))


@dataclass
class DoublingReport:
    b: float
    c: float
    alpha: float
    eps_star: float
    boundary_margin: float
    points: list = field(default_factory=list)
    verdict: str = INCONCLUSIVE
    diagnostics: list = field(default_factory=list)

    @property
    def margins_ok(self) -> bool:
        return all(p.estimates_ok and p.interior_ok and p.ledger_ok for p in self.points)

    def to_dict(self) -> dict:
        return dict(
            b=self.b,
            c=self.c,
            alpha=self.alpha,
            eps_star=_jsonable(self.eps_star),
            boundary_margin=self.boundary_margin,
            verdict=self.verdict,
            margins_ok=self.margins_ok,
            diagnostics=list(self.diagnostics),
            points=[p.to_dict() for p in self.points],
            note="grid-scale diagnostic on a finite stopping-closed family; not a continuum proof",
        )


def _jsonable(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def check_boundary(F1: np.ndarray, F2: np.ndarray) -> float:
    excess = F1[-1] - F2[-1]
    i = int(np.argmax(excess))
    if excess[i] > 0:
        raise BoundaryViolation(f"phi1(T, x) exceeds phi2(T, x) by {excess[i]:.6g} at member {i}", float(excess[i]), i)
    return float(-excess[i])


def comparison_verdict(
    phi1,
    phi2,
    family: PathFamily,
    H: Hamiltonian,
    schedule,
    b_tol: float = 0.0,
    touching: bool = True,
    threads: int = 1,
) -> DoublingReport:
    """Run the doubling pipeline over an (epsilon, delta) schedule.

    The verdict is ``comparison-holds`` when b <= b_tol. Otherwise the gap
    H(t, x, grad psi1) - H(tau, y, grad psi1) is compared with 2 alpha at every
    interior maximizer: ``contradiction-detected`` when the gap reaches 2 alpha
    at every schedule point with eps <= eps_* (and there is at least one),
    ``inconclusive`` otherwise, with the flagged points listed in diagnostics.
    """
    schedule = validate_schedule(schedule)
    F1, F2 = tabulate(phi1, family), tabulate(phi2, family)
    boundary = check_boundary(F1, F2)
    bounds = pair_bounds(F1, F2, family)
    report = DoublingReport(bounds.b, bounds.c, bounds.alpha, bounds.eps_star, boundary)
    if bounds.b <= b_tol:
        report.verdict = HOLDS
        report.diagnostics.append("b <= tolerance: phi1 <= phi2 on the family")
        return report

    spec = family.spec
    L = family.slope_bound
    sweep = ProductSweep(family)
    for eps, dlt in schedule:
        cfg = DoublingConfig(eps, dlt, bounds.alpha, L)
        m = maximize_phi(F1, F2, family, cfg, threads=threads, sweep=sweep)
        est = proof_estimates(F1, F2, family, cfg, m, bounds)
        interior = (m.t_idx < spec.m_fut, m.tau_idx < spec.m_fut)
        pt = SchedulePoint(eps, dlt, m, est, eps <= bounds.eps_star, interior)
        if all(interior):
            psi1, psi2, ledger = test_functionals(m, cfg, float(F1[m.t_idx, m.x_index]), float(F2[m.tau_idx, m.y_index]))
            if touching:
                tmax, tmin = touching_margins(psi1, psi2, F1, F2, family, m)
                ledger = DerivativeLedger(**{**ledger.__dict__, "touching_max_margin": tmax, "touching_min_margin": tmin})
            pt.ledger = ledger
            s = ledger.grad_psi1
            pt.hamiltonian_gap = H(m.t_idx, m.x.path, s) - H(m.tau_idx, m.y.path, s)
            pt.gap_flag = bool(pt.hamiltonian_gap >= 2 * bounds.alpha)
        report.points.append(pt)

    flagged = [p for p in report.points if p.gap_flag]
    below = [p for p in report.points if p.below_eps_star]
    if below and all(p.gap_flag for p in below):
        report.verdict = CONTRADICTION
    else:
        report.verdict = INCONCLUSIVE
        for p in flagged:
            report.diagnostics.append(
                f"gap {p.hamiltonian_gap:.6g} >= 2 alpha = {2 * bounds.alpha:.6g} at eps={p.epsilon:g}, delta={p.delta:g}"
            )
        if not below:
            report.diagnostics.append("no schedule point lies at or below eps_*")
    if not report.margins_ok:
        report.diagnostics.append("a proof-step margin is negative; see points")
    return report
