"""The doubled-variable penalty V^L and its building blocks V1, V2, V3.

All four are evaluated by one vectorized kernel, :func:`penalty_parts`,
which takes the reduced geometry of a quadruple (t, x, tau, y):

* ``dt = t - tau``
* ``dxy = x(t) - y(tau)``
* ``sup_sq = max_{xi <= t ^ tau} ||x(xi) - y(xi)||^2``
* ``diag``: whether (t, x(. ^ t)) == (tau, y(. ^ tau)), by exact equality.

The scalar API (:func:`v1`, :func:`vL`, ...) and the batch API
(:class:`PairGeometry`) both go through that kernel, so sweeps and pointwise
evaluations agree to the last bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calculus import Functional
from .paths import GridPath, PointedPath, sup_sq_upto

TINY_V2 = 1e-300
CROSS_CHECK_ULPS = 8


class PenaltyConsistencyError(ArithmeticError):
    """The two closed forms of V^L disagree beyond rounding."""


@dataclass(frozen=True)
class PenaltyParams:
    L: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.L) or self.L < 0:
            raise ValueError(f"penalty slope L must be finite and non-negative, got {self.L}")


@dataclass(frozen=True)
class PenaltyEval:
    V: float
    P: float
    Q: np.ndarray


def _as_params(params) -> PenaltyParams:
    return params if isinstance(params, PenaltyParams) else PenaltyParams(float(params))


def penalty_parts(dt, dxy, sup_sq, diag, L: float) -> dict:
    """Vectorized (V1, P1, Q1), V2, (V3, P3, Q3), (V^L, P^L, Q^L).

    ``dxy`` carries the state dimension as its last axis; every other input
    broadcasts against ``dxy[..., 0]``. ``direct`` holds V2 + V1^2 / V2, the
    second closed form of V^L, where it is defined (NaN elsewhere).
    """
    dt = np.asarray(dt, dtype=float)
    dxy = np.asarray(dxy, dtype=float)
    sup_sq = np.asarray(sup_sq, dtype=float)
    diag = np.asarray(diag, dtype=bool)
    c = 2.0 * L * L + 1.0

    v1 = c * dt * dt + 2.0 * np.sum(dxy * dxy, axis=-1)
    p1 = 2.0 * c * dt
    q1 = 4.0 * dxy
    v2 = np.maximum(v1, sup_sq)

    gap = v2 - v1
    with np.errstate(divide="ignore", invalid="ignore"):
        r = gap / v2
    # r is (V2 - V1) / V2 in [0, 1]; 0/0 below TINY_V2 falls back to 0.
    r = np.where(np.isfinite(r), np.clip(r, 0.0, 1.0), 0.0)
    r = np.where(diag, 0.0, r)

    v3 = np.where(diag, 0.0, gap * r)
    p3 = np.where(diag, 0.0, -2.0 * r * p1)
    q3 = np.where(diag[..., None], 0.0, (-2.0 * r)[..., None] * q1)

    vl = v3 + 2.0 * v1
    pl = p3 + 2.0 * p1
    ql = q3 + 2.0 * q1

    defined = ~diag & (v2 >= TINY_V2)
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = np.where(defined, v2 + v1 * v1 / v2, np.nan)

    return dict(V1=v1, P1=p1, Q1=q1, V2=v2, V3=v3, P3=p3, Q3=q3, VL=vl, PL=pl, QL=ql, direct=direct)


def _geometry(t_idx: int, x: GridPath, tau_idx: int, y: GridPath):
    if x.spec != y.spec:
        raise ValueError("paths live on different grids")
    spec = x.spec
    dt = spec.time(t_idx) - spec.time(tau_idx)
    dxy = x.at(t_idx) - y.at(tau_idx)
    sup_sq = sup_sq_upto(x, y, min(t_idx, tau_idx))
    i = spec.node(t_idx)
    diag = t_idx == tau_idx and np.array_equal(x.samples[: i + 1], y.samples[: i + 1])
    return dt, dxy, sup_sq, diag


def _scalar_parts(t_idx, x, tau_idx, y, params):
    L = _as_params(params).L
    return penalty_parts(*_geometry(t_idx, x, tau_idx, y), L)


def is_diagonal(t_idx: int, x: GridPath, tau_idx: int, y: GridPath) -> bool:
    """Whether (t, x(. ^ t)) == (tau, y(. ^ tau)) exactly."""
    return bool(_geometry(t_idx, x, tau_idx, y)[3])


def v1(t_idx, x, tau_idx, y, params) -> PenaltyEval:
    p = _scalar_parts(t_idx, x, tau_idx, y, params)
    return PenaltyEval(float(p["V1"]), float(p["P1"]), p["Q1"])


def v2(t_idx, x, tau_idx, y, params) -> float:
    return float(_scalar_parts(t_idx, x, tau_idx, y, params)["V2"])


def v3(t_idx, x, tau_idx, y, params) -> PenaltyEval:
    p = _scalar_parts(t_idx, x, tau_idx, y, params)
    return PenaltyEval(float(p["V3"]), float(p["P3"]), p["Q3"])


def vL(t_idx, x, tau_idx, y, params) -> PenaltyEval:
    """V^L = V3 + 2 V1, cross-checked against V2 + V1^2 / V2 off the diagonal."""
    p = _scalar_parts(t_idx, x, tau_idx, y, params)
    V = float(p["VL"])
    direct = float(p["direct"])
    if np.isfinite(direct):
        tol = CROSS_CHECK_ULPS * np.spacing(max(abs(V), abs(direct)))
        if abs(V - direct) > tol:
            raise PenaltyConsistencyError(f"V3 + 2 V1 = {V!r} but V2 + V1^2/V2 = {direct!r}")
    return PenaltyEval(V, float(p["PL"]), p["QL"])


@dataclass(frozen=True)
class LowerBoundCheck:
    applicable: bool
    condition: str
    passed: bool
    margin_sup: float
    margin_time: float


@dataclass(frozen=True)
class DerivativeBoundCheck:
    passed: bool
    margin_P: float
    margin_Q: float


def _increment_ok(path: GridPath, lo: int, hi: int, L: float) -> bool:
    """||path(hi) - path(xi)|| <= L (t_hi - t_lo) at every node xi in [lo, hi]."""
    spec = path.spec
    seg = path.samples[spec.node(lo) : spec.node(hi) + 1]
    worst = np.max(np.linalg.norm(seg - path.at(hi), axis=1))
    budget = L * (spec.time(hi) - spec.time(lo))
    return bool(worst <= budget * (1 + 1e-12) + 1e-15)


def lower_bound_condition(t_idx, x, tau_idx, y, L: float) -> str | None:
    """Name of the satisfied hypothesis of the lower bounds, or None."""
    if tau_idx >= t_idx and _increment_ok(y, t_idx, tau_idx, L):
        return "tau>=t"
    if t_idx >= tau_idx and _increment_ok(x, tau_idx, t_idx, L):
        return "t>=tau"
    return None


def check_lower_bounds(t_idx, x, tau_idx, y, params) -> LowerBoundCheck:
    """V^L >= ||x(. ^ t) - y(. ^ tau)||^2 and V^L >= (t - tau)^2 where applicable."""
    L = _as_params(params).L
    cond = lower_bound_condition(t_idx, x, tau_idx, y, L)
    V = vL(t_idx, x, tau_idx, y, params).V
    spec = x.spec
    xs = np.array(x.samples)
    ys = np.array(y.samples)
    xs[spec.node(t_idx) + 1 :] = xs[spec.node(t_idx)]
    ys[spec.node(tau_idx) + 1 :] = ys[spec.node(tau_idx)]
    sup_sq = float(np.max(np.sum((xs - ys) ** 2, axis=1)))
    m_sup = V - sup_sq
    m_time = V - (spec.time(t_idx) - spec.time(tau_idx)) ** 2
    if cond is None:
        return LowerBoundCheck(False, "not applicable", True, m_sup, m_time)
    return LowerBoundCheck(True, cond, m_sup >= 0 and m_time >= 0, m_sup, m_time)


def check_derivative_bounds(t_idx, x, tau_idx, y, params) -> DerivativeBoundCheck:
    """|P^L| <= 4 (2L^2 + 1) |t - tau| and ||Q^L|| <= 8 ||x(t) - y(tau)||."""
    L = _as_params(params).L
    e = vL(t_idx, x, tau_idx, y, params)
    spec = x.spec
    bound_p = 4.0 * (2.0 * L * L + 1.0) * abs(spec.time(t_idx) - spec.time(tau_idx))
    bound_q = 8.0 * float(np.linalg.norm(x.at(t_idx) - y.at(tau_idx)))
    m_p = bound_p - abs(e.P)
    m_q = bound_q - float(np.linalg.norm(e.Q))
    return DerivativeBoundCheck(m_p >= 0 and m_q >= 0, m_p, m_q)


def slice_functional(anchor: PointedPath, side: str, params) -> Functional:
    """One-sided slice of V^L with its claimed ci-derivatives.

    ``side="left"`` freezes (tau, y) = anchor and varies (t, x): the exact
    ci-derivatives are (P^L, Q^L), valid when t >= tau or when y grows at most
    like L (xi - t) on [t, tau]. ``side="right"`` freezes (t, x) = anchor and
    varies (tau, y), with derivatives (-P^L, -Q^L) under the mirrored
    condition.
    """
    L = _as_params(params).L
    a_idx, a_path = anchor.t_idx, anchor.path

    if side == "left":

        def ev(t, x):
            return vL(t, x, a_idx, a_path, L).V

        def ci(t, x):
            e = vL(t, x, a_idx, a_path, L)
            return e.P, e.Q

    elif side == "right":

        def ev(t, x):
            return vL(a_idx, a_path, t, x, L).V

        def ci(t, x):
            e = vL(a_idx, a_path, t, x, L)
            return -e.P, -e.Q

    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")

    def valid(t, _x):
        return t >= a_idx or _increment_from(a_path, t, a_idx, L)

    return Functional(ev, ci, True, valid, name=f"V^L {side} slice")


def _increment_from(path: GridPath, lo: int, hi: int, L: float) -> bool:
    """||path(xi) - path(t_lo)|| <= L (xi - t_lo) for nodes xi in [lo, hi]."""
    spec = path.spec
    seg = path.samples[spec.node(lo) : spec.node(hi) + 1]
    lag = spec.times[spec.node(lo) : spec.node(hi) + 1] - spec.time(lo)
    gaps = np.linalg.norm(seg - path.at(lo), axis=1)
    return bool(np.all(gaps <= L * lag * (1 + 1e-12) + 1e-15))


def naive_sup_functional(anchor: PointedPath) -> Functional:
    """(t, x) -> max_{xi <= t ^ tau} ||x(xi) - y(xi)||^2 for the anchor (tau, y).

    This is the plain doubled sup-norm penalty; it is not ci-differentiable
    where the running maximum is attained at the current time.
    """

    def ev(t, x):
        return sup_sq_upto(x, anchor.path, min(t, anchor.t_idx))

    return Functional(ev, None, True, name="naive sup-norm penalty")


def stop_array(X: np.ndarray, node: int) -> np.ndarray:
    """Stop every path of a ``(P, N, n)`` sample array at array index ``node``."""
    out = np.array(X)
    out[:, node + 1 :] = out[:, node : node + 1]
    return out


class PairGeometry:
    """Pairwise node geometry of two stacks of paths on a shared grid.

    Holds, for every pair (i, j) and array node k, the running maximum of
    ||X_i - Y_j||^2 over nodes <= k and whether the histories agree exactly up
    to k. Blocks of :func:`penalty_parts` for any pair of time indices are then
    cheap slices.
    """

    def __init__(self, spec, X: np.ndarray, Y: np.ndarray):
        self.spec = spec
        self.X = np.asarray(X, dtype=float)
        self.Y = np.asarray(Y, dtype=float)
        diff = self.X[:, None, :, :] - self.Y[None, :, :, :]
        self.sup_sq = np.maximum.accumulate(np.sum(diff * diff, axis=-1), axis=-1)
        self.equal = np.logical_and.accumulate(np.all(diff == 0.0, axis=-1), axis=-1)

    def block(self, t_idx: int, tau_idx: int, L: float) -> dict:
        spec = self.spec
        i, j = spec.node(t_idx), spec.node(tau_idx)
        m = min(i, j)
        dt = spec.times[i] - spec.times[j]
        dxy = self.X[:, None, i, :] - self.Y[None, :, j, :]
        diag = self.equal[:, :, m] if t_idx == tau_idx else np.zeros(self.sup_sq.shape[:2], bool)
        return penalty_parts(dt, dxy, self.sup_sq[:, :, m], diag, L)
