"""Exhaustive and sampled verification sweeps built on the penalty module.

``penalty_suite`` checks every (t, x, tau, y) of a family against the
structural properties of V^L; ``ci_agreement`` compares finite-difference
ci-derivatives of the one-sided slices with their closed forms along a
refinement ladder; ``naive_exhibit`` contrasts the affine-fit residual of the
plain doubled sup-norm penalty with that of V^L at a running-max switch point.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .calculus import ci_derivative_fd
from .paths import GridPath, GridSpec, PathFamily, PointedPath
from .penalty import PairGeometry, is_diagonal, naive_sup_functional, slice_functional, stop_array

PROPERTIES = (
    "nonnegative",
    "symmetry",
    "non_anticipative",
    "zero_characterization",
    "lower_bound_sup",
    "lower_bound_time",
    "derivative_bound_P",
    "derivative_bound_Q",
    "two_form",
)
SYMMETRY_ULPS = 4
TWO_FORM_RTOL = 1e-12


def _increment_table(X: np.ndarray, spec: GridSpec, L: float) -> np.ndarray:
    """ok[p, a, b] for a <= b: ||X_p(b) - X_p(xi)|| <= L (t_b - t_a) on nodes xi in [a, b]."""
    K = spec.m_fut + 1
    P = X.shape[0]
    ok = np.ones((P, K, K), dtype=bool)
    for a in range(K):
        for b in range(a + 1, K):
            i, j = spec.node(a), spec.node(b)
            worst = np.max(np.linalg.norm(X[:, i : j + 1] - X[:, j : j + 1], axis=-1), axis=1)
            budget = L * (spec.time(b) - spec.time(a))
            ok[:, a, b] = worst <= budget * (1 + 1e-12) + 1e-15
    return ok


@dataclass
class BlockResult:
    t_idx: int
    tau_idx: int
    pairs: int
    violations: dict
    min_margins: dict
    max_two_form_rel: float
    not_applicable: int
    detail: Optional[dict] = None


@dataclass
class PenaltySuiteResult:
    n_paths: int
    n_nodes: int
    L: float
    blocks: list = field(default_factory=list)

    @property
    def quadruples(self) -> int:
        return sum(b.pairs for b in self.blocks)

    @property
    def violations(self) -> dict:
        out = {k: 0 for k in PROPERTIES}
        for b in self.blocks:
            for k, v in b.violations.items():
                out[k] += v
        return out

    @property
    def min_margins(self) -> dict:
        out = {}
        for b in self.blocks:
            for k, v in b.min_margins.items():
                out[k] = min(out.get(k, math.inf), v)
        return out

    @property
    def max_two_form_rel(self) -> float:
        return max((b.max_two_form_rel for b in self.blocks), default=0.0)

    @property
    def not_applicable(self) -> int:
        return sum(b.not_applicable for b in self.blocks)

    @property
    def passed(self) -> bool:
        return all(v == 0 for v in self.violations.values())


def _block(spec, X, G, inc, L, a, b, detail):
    i, j = spec.node(a), spec.node(b)
    P = X.shape[0]
    blk = G.block(a, b, L)
    mirror = G.block(b, a, L)
    V, PL, QL = blk["VL"], blk["PL"], blk["QL"]
    viol, marg = {}, {}

    nonneg = np.minimum.reduce([blk["V1"], blk["V2"], blk["V3"], V])
    viol["nonnegative"] = int(np.count_nonzero(nonneg < 0))
    marg["nonnegative"] = float(nonneg.min())

    Vm, Pm, Qm = mirror["VL"].T, mirror["PL"].T, np.swapaxes(mirror["QL"], 0, 1)
    tolV = SYMMETRY_ULPS * np.spacing(np.maximum(np.abs(V), np.abs(Vm)))
    tolP = SYMMETRY_ULPS * np.spacing(np.maximum(np.abs(PL), np.abs(Pm)))
    tolQ = SYMMETRY_ULPS * np.spacing(np.maximum(np.abs(QL), np.abs(Qm)))
    sym_bad = (np.abs(V - Vm) > tolV) | (np.abs(PL + Pm) > tolP) | np.any(np.abs(QL + Qm) > tolQ, axis=-1)
    viol["symmetry"] = int(np.count_nonzero(sym_bad))

    Gs = PairGeometry(spec, stop_array(X, i), stop_array(X, j)).block(a, b, L)
    na_bad = (Gs["VL"] != V) | (Gs["PL"] != PL) | np.any(Gs["QL"] != QL, axis=-1)
    viol["non_anticipative"] = int(np.count_nonzero(na_bad))

    diag = G.equal[:, :, min(i, j)] if a == b else np.zeros((P, P), bool)
    viol["zero_characterization"] = int(np.count_nonzero((V == 0) != diag))

    # ||x(. ^ t) - y(. ^ tau)||^2: running max up to t ^ tau, then one path is frozen.
    lo, hi = min(i, j), max(i, j)
    stopped = G.sup_sq[:, :, lo]
    if i < j:
        tail = X[:, None, i : i + 1, :] - X[None, :, i : j + 1, :]
    else:
        tail = X[:, None, j : i + 1, :] - X[None, :, j : j + 1, :]
    stopped = np.maximum(stopped, np.max(np.sum(tail * tail, axis=-1), axis=-1))
    if a <= b:
        applicable = np.broadcast_to(inc[None, :, a, b], (P, P))
    else:
        applicable = np.broadcast_to(inc[:, None, b, a], (P, P))
    dt = spec.time(a) - spec.time(b)
    m_sup = np.where(applicable, V - stopped, np.inf)
    m_time = np.where(applicable, V - dt * dt, np.inf)
    viol["lower_bound_sup"] = int(np.count_nonzero(m_sup < 0))
    viol["lower_bound_time"] = int(np.count_nonzero(m_time < 0))
    marg["lower_bound_sup"] = float(m_sup.min())
    marg["lower_bound_time"] = float(m_time.min())

    c = 2.0 * L * L + 1.0
    dxy = X[:, None, i, :] - X[None, :, j, :]
    m_p = 4.0 * c * abs(dt) - np.abs(PL)
    m_q = 8.0 * np.linalg.norm(dxy, axis=-1) - np.linalg.norm(QL, axis=-1)
    viol["derivative_bound_P"] = int(np.count_nonzero(m_p < 0))
    viol["derivative_bound_Q"] = int(np.count_nonzero(m_q < 0))
    marg["derivative_bound_P"] = float(m_p.min())
    marg["derivative_bound_Q"] = float(m_q.min())

    direct = blk["direct"]
    defined = np.isfinite(direct)
    rel = np.zeros_like(V)
    rel[defined] = np.abs(V[defined] - direct[defined]) / np.abs(direct[defined])
    off = ~diag
    viol["two_form"] = int(np.count_nonzero(off & ~defined & (V != 0)) + np.count_nonzero(rel > TWO_FORM_RTOL))
    res = BlockResult(a, b, P * P, viol, marg, float(rel.max()), int(np.count_nonzero(~applicable)))
    if detail:
        res.detail = dict(
            V=V, P=PL, Q=np.linalg.norm(QL, axis=-1), m_sup=m_sup, m_time=m_time, m_p=m_p, m_q=m_q, rel=rel,
            bad=sym_bad | na_bad | ((V == 0) != diag),
        )
    return res


def penalty_suite(family: PathFamily, L: Optional[float] = None, threads: int = 1, detail: bool = False) -> PenaltySuiteResult:
    """Check the V^L properties at every (t, x, tau, y) over the family and its nodes."""
    family.check_cap()
    spec = family.spec
    L = family.slope_bound if L is None else float(L)
    X = family.array
    G = PairGeometry(spec, X, X)
    inc = _increment_table(X, spec, L)
    K = spec.m_fut + 1
    jobs = [(a, b) for a in range(K) for b in range(K)]

    def run(ab):
        return _block(spec, X, G, inc, L, ab[0], ab[1], detail)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            blocks = list(pool.map(run, jobs))
    else:
        blocks = [run(ab) for ab in jobs]
    return PenaltySuiteResult(len(family), K, L, blocks)


# -- finite-difference agreement ---------------------------------------------------


@dataclass(frozen=True)
class AgreementSample:
    side: str
    t_idx: int
    anchor_idx: int
    x_index: int
    y_index: int
    errors: tuple
    scale: float
    residuals: tuple

    @property
    def halving_ok(self) -> bool:
        """Each refinement at most doubles the error, and the finest beats the coarsest."""
        e = self.errors
        tiny = 1e-13
        steps = all(b <= 2 * a or b <= tiny for a, b in zip(e, e[1:]))
        return steps and (e[-1] <= e[0] or e[-1] <= tiny)

    def absolute_ok(self, rtol: float = 0.05) -> bool:
        return self.errors[-1] <= rtol * self.scale


@dataclass
class AgreementResult:
    factors: tuple
    samples: list

    @property
    def n_valid(self) -> int:
        return len(self.samples)

    @property
    def halving_failures(self) -> int:
        return sum(not s.halving_ok for s in self.samples)

    def absolute_failures(self, rtol: float = 0.05) -> int:
        return sum(not s.absolute_ok(rtol) for s in self.samples)

    @property
    def worst_ratio(self) -> float:
        return max((s.errors[-1] / s.scale for s in self.samples), default=0.0)


def ci_agreement(family: PathFamily, n_samples: int = 200, factors=(1, 2, 4), seed: int = 0, L: Optional[float] = None) -> AgreementResult:
    """Finite-difference vs closed-form ci-derivatives of V^L slices on a refinement ladder.

    Anchors and points are drawn from the family on its own grid; each pair
    is then re-sampled on grids ``factor`` times finer (same piecewise-linear
    paths) and differenced with a one-interval step. Only pairs where the
    slice hypotheses hold on every grid and the point is off the diagonal
    are kept. The error is |dt - dt_exact| + ||grad - grad_exact||.
    """
    spec = family.spec
    L = family.slope_bound if L is None else float(L)
    rng = np.random.default_rng(seed)
    paths = family.paths
    out = []
    attempts = 0
    while len(out) < n_samples and attempts < 50 * n_samples:
        attempts += 1
        side = "left" if len(out) % 2 == 0 else "right"
        a_idx = int(rng.integers(0, spec.m_fut + 1))
        t_idx = int(rng.integers(0, spec.m_fut))
        yi, xi = int(rng.integers(len(paths))), int(rng.integers(len(paths)))
        anchor = PointedPath(a_idx, paths[yi])
        x = paths[xi]
        if is_diagonal(t_idx, x, a_idx, anchor.path):
            continue
        errs, res, scale, valid = [], [], 0.0, True
        for f in factors:
            af = PointedPath(a_idx * f, anchor.path.refined(f))
            xf = x.refined(f)
            F = slice_functional(af, side, L)
            if not F.valid_at(t_idx * f, xf):
                valid = False
                break
            d = ci_derivative_fd(F, PointedPath(t_idx * f, xf))
            P, Q = F.ci(t_idx * f, xf)
            errs.append(abs(d.dt - P) + float(np.linalg.norm(d.grad - Q)))
            res.append(d.residual)
            scale = 1.0 + abs(P) + float(np.linalg.norm(Q))
        if valid:
            out.append(AgreementSample(side, t_idx, a_idx, xi, yi, tuple(errs), scale, tuple(res)))
    return AgreementResult(tuple(factors), out)


# -- naive penalty exhibit --------------------------------------------------------------


@dataclass(frozen=True)
class ExhibitResult:
    steps: tuple
    naive_residuals: tuple
    penalty_residuals: tuple
    t_idx: int
    anchor_idx: int

    def passed(self, naive_floor: float = 0.1, penalty_ceiling: float = 0.01) -> bool:
        return min(self.naive_residuals) > naive_floor and self.penalty_residuals[-1] < penalty_ceiling


def switch_point(h: float = 1.0, T: float = 1.0, m_past: int = 4, m_fut: int = 512, gap: float = 1.0):
    """(t, x) and anchor (tau, y) where the running max of ||x - y|| is attained at t.

    x is the constant ``gap``, y the zero path, t = T / 2 and tau = T, so
    t < tau and y has zero increments: the slice hypothesis holds.
    """
    spec = GridSpec(h, T, 1, m_past, m_fut)
    x = GridPath(spec, np.full((spec.n_nodes, 1), float(gap)))
    y = GridPath(spec, np.zeros((spec.n_nodes, 1)))
    return PointedPath(m_fut // 2, x), PointedPath(m_fut, y)


def naive_exhibit(L: float = 1.0, steps_in_intervals=(4, 2, 1), **grid) -> ExhibitResult:
    """Affine-fit residuals of the naive penalty and of V^L at a switch point, per step."""
    p, anchor = switch_point(**grid)
    spec = p.path.spec
    naive = naive_sup_functional(anchor)
    pen = slice_functional(anchor, "left", L)
    if not pen.valid_at(p.t_idx, p.path):
        raise AssertionError("switch point violates the slice hypothesis")
    steps = tuple(k * spec.dt for k in steps_in_intervals)
    nr = tuple(ci_derivative_fd(naive, p, step=s).residual for s in steps)
    pr = tuple(ci_derivative_fd(pen, p, step=s).residual for s in steps)
    return ExhibitResult(steps, nr, pr, p.t_idx, anchor.t_idx)
