"""Bellman Hamiltonians and backward dynamic programming on path families.

The control problem behind a Bellman Hamiltonian

    H(t, x(.), s) = min_{u in U} <f(t, x(.), u), s> + g(t, x(.), u)

is discretized on a :class:`~cihj.paths.PathFamily`: controls act for one grid
step with the velocity f frozen at the left endpoint (explicit Euler), the
running cost is integrated by the left rectangle rule, and the value is
stored per stopped history, which keeps tables non-anticipative.
"""

from __future__ import annotations

import ast
import csv
import io
import logging
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .calculus import Functional
from .paths import GridPath, PathFamily, lip_extension, path_key, stop

log = logging.getLogger(__name__)


class ProjectionDefectError(ValueError):
    """A control velocity is too far from every alphabet velocity."""


class PathNotInFamily(KeyError):
    """A value-table lookup for a history the table does not cover."""


@dataclass(frozen=True)
class Hamiltonian:
    """H(t, x(.), s) evaluated at grid nodes; ``metadata`` records declared constants."""

    eval: Callable[[int, GridPath, np.ndarray], float]
    metadata: dict = field(default_factory=dict)

    def __call__(self, t_idx: int, x: GridPath, s) -> float:
        return float(self.eval(t_idx, x, np.atleast_1d(np.asarray(s, dtype=float))))


@dataclass(frozen=True)
class BellmanData:
    """Controls U, dynamics f, running cost g and terminal cost of a delay control problem.

    ``f(t_idx, x, u)`` and ``g(t_idx, x, u)`` must only read the history of x
    up to t; ``terminal(x)`` reads x on the whole of [-h, T].
    """

    controls: tuple
    f: Callable[[int, GridPath, np.ndarray], np.ndarray]
    g: Callable[[int, GridPath, np.ndarray], float]
    terminal: Callable[[GridPath], float]

    def __post_init__(self):
        ctrl = tuple(np.atleast_1d(np.asarray(u, dtype=float)) for u in self.controls)
        if not ctrl:
            raise ValueError("control set U must not be empty")
        object.__setattr__(self, "controls", ctrl)


def bellman_h(data: BellmanData, t_idx: int, x: GridPath, s) -> float:
    """min over controls of <f, s> + g."""
    if not data.controls:
        raise ValueError("control set U must not be empty")
    s = np.atleast_1d(np.asarray(s, dtype=float))
    return min(float(np.dot(data.f(t_idx, x, u), s)) + float(data.g(t_idx, x, u)) for u in data.controls)


def bellman_hamiltonian(data: BellmanData, **metadata) -> Hamiltonian:
    return Hamiltonian(lambda t, x, s: bellman_h(data, t, x, s), dict(form="bellman", **metadata))


# -- value tables ---------------------------------------------------------


@dataclass
class ValueTable:
    """Values per (node index, stopped history) over an enumerated family."""

    family: PathFamily
    layers: list
    policy: str = "stopped-path-key"
    max_defect: float = 0.0

    def lookup(self, t_idx: int, path: GridPath) -> float:
        try:
            return self.layers[t_idx][path.prefix_key(t_idx)]
        except KeyError:
            raise PathNotInFamily(f"history up to node {t_idx} is not covered by the table") from None

    def as_array(self) -> np.ndarray:
        """Values at (t_idx, member index), shape ``(m_fut + 1, n_paths)``."""
        spec = self.family.spec
        out = np.empty((spec.m_fut + 1, len(self.family)))
        for k in range(spec.m_fut + 1):
            i = spec.node(k)
            layer = self.layers[k]
            for p, s in enumerate(self.family.array):
                out[k, p] = layer[path_key(s[: i + 1])]
        return out

    def entries(self):
        """Yield (t_idx, representative stopped path, value) in deterministic order."""
        spec = self.family.spec
        for k in range(spec.m_fut + 1):
            for key, path in _histories(self.family, k):
                yield k, path, self.layers[k][key]

    def perturbed(self, t_idx: int, path: GridPath, amount: float) -> "ValueTable":
        layers = [dict(layer) for layer in self.layers]
        key = path.prefix_key(t_idx)
        if key not in layers[t_idx]:
            raise PathNotInFamily("cannot perturb a history outside the table")
        layers[t_idx][key] += amount
        return ValueTable(self.family, layers, self.policy, self.max_defect)

    def to_csv(self, target=None) -> str:
        """Rows ``t_idx, time, value, s0, s1, ...`` with the stopped path flattened."""
        spec = self.family.spec
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_idx", "time", "value"] + [f"s{i}" for i in range(spec.n_nodes * spec.n)])
        for k, path, value in self.entries():
            w.writerow([k, repr(spec.time(k)), repr(float(value))] + [repr(float(v)) for v in path.samples.ravel()])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text

    @classmethod
    def from_csv(cls, family: PathFamily, source) -> "ValueTable":
        spec = family.spec
        text = Path(source).read_text()
        layers = [dict() for _ in range(spec.m_fut + 1)]
        for row in list(csv.reader(io.StringIO(text)))[1:]:
            k = int(row[0])
            samples = np.array([float(v) for v in row[3:]]).reshape(spec.n_nodes, spec.n)
            layers[k][GridPath(spec, samples).prefix_key(k)] = float(row[2])
        table = cls(family, layers, policy="csv")
        for k in range(spec.m_fut + 1):
            missing = [key for key, _ in _histories(family, k) if key not in layers[k]]
            if missing:
                raise PathNotInFamily(f"table file misses {len(missing)} histories at node {k}")
        return table


def _histories(family: PathFamily, t_idx: int):
    """Distinct stopped histories at node t_idx as (key, stopped path), in family order."""
    spec = family.spec
    i = spec.node(t_idx)
    seen = {}
    for path, s in zip(family.paths, family.array):
        key = path_key(s[: i + 1])
        if key not in seen:
            seen[key] = stop(path, t_idx)
    return list(seen.items())


def table_from_function(family: PathFamily, fn: Callable[[int, GridPath], float]) -> ValueTable:
    """Tabulate a non-anticipative functional on the family's stopped histories."""
    layers = []
    for k in range(family.spec.m_fut + 1):
        layers.append({key: float(fn(k, path)) for key, path in _histories(family, k)})
    return ValueTable(family, layers, policy="injected")


def as_functional(table: ValueTable) -> Functional:
    return Functional(table.lookup, None, True, name="value table")


def _project(family: PathFamily, v: np.ndarray) -> tuple[np.ndarray, float]:
    alphabet = np.array(family.future_alphabet)
    d = np.linalg.norm(alphabet - v, axis=1)
    i = int(np.argmin(d))
    return alphabet[i], float(d[i])


def _one_step(data, family, layers, k, path, tol):
    """min over controls of g dt + value(k + 1, extension), and the worst defect."""
    spec = family.spec
    dt = spec.dt
    best = math.inf
    worst = 0.0
    nxt = layers[k + 1]
    for u in data.controls:
        v = np.atleast_1d(np.asarray(data.f(k, path, u), dtype=float))
        w, defect = _project(family, v)
        worst = max(worst, defect * dt)
        if defect * dt > tol:
            raise ProjectionDefectError(
                f"velocity {v} at node {k} is {defect:.3g} away from the alphabet"
            )
        z = lip_extension(k, path, w)
        try:
            cont = nxt[z.prefix_key(k + 1)]
        except KeyError:
            raise PathNotInFamily("extension left the family; is the alphabet closed?") from None
        best = min(best, float(data.g(k, path, u)) * dt + cont)
    return best, worst


def solve_dp(data: BellmanData, family: PathFamily, defect_tol: float = 1e-9) -> ValueTable:
    """Backward induction value(t, x) = min_u [g dt + value(t + dt, z_{t,x,f})]."""
    spec = family.spec
    family.check_cap()
    layers: list = [None] * (spec.m_fut + 1)
    layers[spec.m_fut] = {key: float(data.terminal(path)) for key, path in _histories(family, spec.m_fut)}
    max_defect = 0.0
    for k in range(spec.m_fut - 1, -1, -1):
        layer = {}
        for key, path in _histories(family, k):
            layer[key], defect = _one_step(data, family, layers, k, path, defect_tol)
            max_defect = max(max_defect, defect)
        layers[k] = layer
    if max_defect > 0:
        log.info("solve_dp: largest alphabet projection defect %.3g", max_defect)
    return ValueTable(family, layers, policy="stopped-path-key", max_defect=max_defect)


def dpp_residual(table: ValueTable, data: BellmanData, defect_tol: float = 1e-9) -> float:
    """Max over interior entries of |value - one-step Bellman update|."""
    family = table.family
    worst = 0.0
    for k in range(family.spec.m_fut):
        for key, path in _histories(family, k):
            update, _ = _one_step(data, family, table.layers, k, path, defect_tol)
            worst = max(worst, abs(table.layers[k][key] - update))
    return worst


# -- assumption checks ------------------------------------------------------


def ball_samples(n: int, radius: float, count: int = 9, seed: int = 0) -> np.ndarray:
    """Deterministic points of the closed ball B(radius) including +-radius e_i."""
    if n == 1:
        return np.linspace(-radius, radius, count).reshape(-1, 1)
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(count, n))
    pts *= (radius * rng.uniform(size=(count, 1)) ** (1 / n)) / np.linalg.norm(pts, axis=1, keepdims=True)
    axes = np.concatenate([np.eye(n), -np.eye(n)]) * radius
    return np.concatenate([np.zeros((1, n)), axes, pts])


def _pair_ratios(H, family, s_samples, weight, max_pairs, seed):
    spec = family.spec
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(spec.m_fut + 1):
        hist = [p for _, p in _histories(family, k)]
        if len(hist) < 2:
            continue
        S = np.array(hist_samples := [p.samples for p in hist])
        vals = np.array([[H(k, p, s) for s in s_samples] for p in hist])
        ii, jj = np.triu_indices(len(hist), 1)
        if max_pairs is not None and len(ii) > max_pairs:
            pick = np.sort(rng.choice(len(ii), size=max_pairs, replace=False))
            ii, jj = ii[pick], jj[pick]
        del hist_samples
        d = np.sqrt(np.max(np.sum((S[ii] - S[jj]) ** 2, axis=-1), axis=-1))
        keep = d > 0
        num = np.abs(vals[ii] - vals[jj])[keep]
        ratio = num / (weight[None, :] * d[keep, None])
        if ratio.size:
            worst = max(worst, float(np.max(ratio)))
    return worst


def check_assumption_A2(
    H: Hamiltonian, family: PathFamily, s_samples, max_pairs: Optional[int] = None, seed: int = 0
) -> float:
    """Empirical L_{H,D}: max |H(t,x,s) - H(t,y,s)| / ((1 + ||s||) ||x(.^t) - y(.^t)||)."""
    s_samples = np.atleast_2d(np.asarray(s_samples, dtype=float))
    if s_samples.shape[1] != family.spec.n:
        s_samples = s_samples.reshape(-1, family.spec.n)
    weight = 1.0 + np.linalg.norm(s_samples, axis=1)
    return _pair_ratios(H, family, s_samples, weight, max_pairs, seed)


def check_assumption_A3(
    H: Hamiltonian,
    family: PathFamily,
    radii: Sequence[float],
    count: int = 9,
    max_pairs: Optional[int] = None,
    seed: int = 0,
) -> dict:
    """Empirical L_{H,D,R} per radius, with s confined to B(R) and no (1 + ||s||) weight."""
    out = {}
    for R in radii:
        s = ball_samples(family.spec.n, R, count, seed)
        out[float(R)] = _pair_ratios(H, family, s, np.ones(len(s)), max_pairs, seed)
    return out


@dataclass(frozen=True)
class GrowthReport:
    per_radius: dict
    growing: bool


def a2_growth(H: Hamiltonian, family: PathFamily, radii=(1.0, 2.0, 4.0), count: int = 9, ratio: float = 1.5) -> GrowthReport:
    """A2 constants with s drawn from growing balls; flags superlinear growth in s.

    A Hamiltonian satisfying the (1 + ||s||)-weighted Lipschitz bound has
    bounded constants; ``growing`` is set when they increase at every radius
    and the last exceeds the first by ``ratio``.
    """
    per = {float(R): check_assumption_A2(H, family, ball_samples(family.spec.n, R, count)) for R in radii}
    vals = list(per.values())
    growing = all(b > a for a, b in zip(vals, vals[1:])) and vals[-1] > ratio * vals[0]
    return GrowthReport(per, bool(growing))


# -- problem files ------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}
_FUNCS = {"abs": abs, "min": min, "max": max, "sqrt": math.sqrt, "exp": math.exp}


def _history_vars(path: GridPath, t_idx: int) -> dict:
    spec = path.spec
    xt = path.at(t_idx)
    xd = path.at_time(spec.time(t_idx) - spec.h)
    run = float(np.max(np.linalg.norm(path.samples[: spec.node(t_idx) + 1], axis=1)))
    env = {"x": float(xt[0]), "xd": float(xd[0]), "sup": run, "norm": float(np.linalg.norm(xt)), "t": spec.time(t_idx)}
    for i in range(spec.n):
        env[f"x_{i}"] = float(xt[i])
        env[f"xd_{i}"] = float(xd[i])
    return env


def compile_expression(text: str) -> Callable[[GridPath, int], float]:
    """Compile a history expression.

    Names: ``x`` / ``x_i`` (current value), ``xd`` / ``xd_i`` (value at t - h),
    ``sup`` (running sup of ||x||), ``norm`` (||x(t)||), ``t``. Functions:
    abs, min, max, sqrt, exp. Operators: + - * / ** and unary minus.
    """
    tree = ast.parse(text, mode="eval")

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return
        if isinstance(node, ast.Name):
            return
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            check(node.left)
            check(node.right)
            return
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            check(node.operand)
            return
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS and not node.keywords:
            for a in node.args:
                check(a)
            return
        raise ValueError(f"unsupported syntax in expression {text!r}: {ast.dump(node)}")

    check(tree)

    def run(node, env):
        if isinstance(node, ast.Expression):
            return run(node.body, env)
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id not in env:
                raise ValueError(f"unknown name {node.id!r} in expression {text!r}")
            return env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](run(node.left, env), run(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = run(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        return float(_FUNCS[node.func.id](*(run(a, env) for a in node.args)))

    def evaluate(path: GridPath, t_idx: int) -> float:
        return float(run(tree, _history_vars(path, t_idx)))

    return evaluate


def _affine_f(spec_f: dict, n: int):
    c = np.asarray(spec_f.get("c", [0.0] * n), dtype=float).reshape(n)
    A = np.asarray(spec_f.get("A", np.zeros((n, n))), dtype=float).reshape(n, n)
    Ad = np.asarray(spec_f.get("Ad", np.zeros((n, n))), dtype=float).reshape(n, n)
    return c, A, Ad


def problem_from_config(cfg: dict, n: int) -> BellmanData:
    """Build BellmanData from a problem document.

    Each entry of ``controls`` holds ``u``, an affine velocity
    ``f = {"c", "A", "Ad"}`` meaning c + A x(t) + Ad x(t - h), and a running
    cost ``g`` given as a number or a history expression. ``terminal`` is a
    history expression evaluated at t = T.
    """
    entries = cfg["controls"]
    if not entries:
        raise ValueError("problem declares no controls")
    us, fs, gs = [], [], []
    for e in entries:
        us.append(np.atleast_1d(np.asarray(e["u"], dtype=float)))
        fs.append(_affine_f(e.get("f", {"c": e["u"]}), n))
        g = e.get("g", 0.0)
        gs.append(compile_expression(g) if isinstance(g, str) else (lambda path, k, g=float(g): g))
    lookup = {u.tobytes(): i for i, u in enumerate(us)}

    def f(k, path, u):
        c, A, Ad = fs[lookup[np.asarray(u, float).tobytes()]]
        spec = path.spec
        return c + A @ path.at(k) + Ad @ path.at_time(spec.time(k) - spec.h)

    def g(k, path, u):
        return gs[lookup[np.asarray(u, float).tobytes()]](path, k)

    term = compile_expression(str(cfg.get("terminal", "0")))
    return BellmanData(tuple(us), f, g, lambda path: term(path, path.spec.m_fut))
