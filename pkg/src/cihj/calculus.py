"""Coinvariant (ci) differentiation on grid paths.

A non-anticipative functional is probed along constant-velocity extensions
z = x(. ^ t) + v (. - t) of the history at t. One-sided quotients

    q(v) = [F(t + step, z_v) - F(t, x)] / step

are fitted by the affine model dt + <grad, v>; the fit residual tells how far
the functional is from ci-differentiable at the probed scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .paths import FamilyTooLarge, GridPath, PathFamily, PointedPath, lip_extension, stop

CiField = Callable[[int, GridPath], tuple]


@dataclass(frozen=True)
class Functional:
    """A functional (t, x(.)) -> R on grid times and grid paths.

    ``exact_ci`` returns ``(dt, grad)`` when analytic ci-derivatives are known;
    ``ci_valid`` optionally restricts the points where they are claimed.
    """

    eval: Callable[[int, GridPath], float]
    exact_ci: Optional[CiField] = None
    claims_non_anticipative: bool = True
    ci_valid: Optional[Callable[[int, GridPath], bool]] = None
    name: str = ""

    def __call__(self, t_idx: int, path: GridPath) -> float:
        return float(self.eval(t_idx, path))

    def ci(self, t_idx: int, path: GridPath) -> tuple[float, np.ndarray]:
        if self.exact_ci is None:
            raise ValueError(f"functional {self.name!r} carries no exact ci-derivatives")
        dt, grad = self.exact_ci(t_idx, path)
        return float(dt), np.atleast_1d(np.asarray(grad, dtype=float))

    def valid_at(self, t_idx: int, path: GridPath) -> bool:
        return True if self.ci_valid is None else bool(self.ci_valid(t_idx, path))


@dataclass(frozen=True)
class CiDerivative:
    dt: float
    grad: np.ndarray
    residual: float
    quotients: dict


def _steps(spec, t_idx: int, step: Optional[float]) -> int:
    if t_idx >= spec.m_fut:
        raise ValueError("ci-derivatives are one-sided and undefined at the horizon")
    if step is None:
        return 1
    k = step / spec.dt
    if k < 1 - 1e-9 or abs(k - round(k)) > 1e-9:
        raise ValueError(f"step {step} is not a positive multiple of the grid spacing {spec.dt}")
    k = int(round(k))
    if t_idx + k > spec.m_fut:
        raise ValueError("step runs past the horizon")
    return k


def ci_derivative_fd(
    F: Functional, p: PointedPath, step: Optional[float] = None, speed: float = 1.0
) -> CiDerivative:
    """Finite-difference ci-derivative from the 2n + 1 probes {0, +-speed e_i}.

    ``step`` defaults to one grid interval. ``speed`` scales the probe
    velocities, which matters for functionals only defined on a family with a
    slope bound below one.
    """
    x, t = p.path, p.t_idx
    spec = x.spec
    k = _steps(spec, t, step)
    h = spec.time(t + k) - spec.time(t)
    base = F(t, x)

    def q(v):
        return (F(t + k, lip_extension(t, x, v)) - base) / h

    eye = np.eye(spec.n) * speed
    probes = {"0": (np.zeros(spec.n), q(np.zeros(spec.n)))}
    for i in range(spec.n):
        probes[f"+{i}"] = (eye[i], q(eye[i]))
        probes[f"-{i}"] = (-eye[i], q(-eye[i]))
    dt = probes["0"][1]
    grad = np.array([(probes[f"+{i}"][1] - probes[f"-{i}"][1]) / (2 * speed) for i in range(spec.n)])
    residual = max(abs(qv - dt - float(grad @ v)) for v, qv in probes.values())
    return CiDerivative(dt, grad, float(residual), {name: qv for name, (_, qv) in probes.items()})


def check_non_anticipative(F: Functional, samples: Iterable[PointedPath]) -> float:
    """Worst |F(t, x) - F(t, x(. ^ t))| over the samples; 0 certifies the sample."""
    worst = 0.0
    for p in samples:
        worst = max(worst, abs(F(p.t_idx, p.path) - F(p.t_idx, stop(p.path, p.t_idx))))
    return worst


def unit_probes(family: PathFamily) -> list[np.ndarray]:
    """Alphabet velocities (plus zero) inside the closed unit ball."""
    return [np.array(v) for v in family.future_alphabet if np.linalg.norm(v) <= 1 + 1e-12]


def lphi_constant(
    F: Functional,
    family: PathFamily,
    probes: Optional[Iterable] = None,
    max_evals: int = 5 * 10**6,
) -> float:
    """Grid version of sup |F(t + d, z_{t,x,v}) - F(t, x)| / d.

    The sup runs over members x, nodes t < T, probes v and grid lags d in
    (0, T - t]. For non-anticipative F only distinct stopped histories are
    visited, since z depends on x through x(. ^ t) alone.
    """
    spec = family.spec
    probes = unit_probes(family) if probes is None else [np.atleast_1d(np.asarray(v, float)) for v in probes]
    for v in probes:
        if np.linalg.norm(v) > 1 + 1e-12:
            raise ValueError(f"probe {v} lies outside the unit ball")

    work = len(family) * len(probes) * spec.m_fut * (spec.m_fut + 1) // 2
    if work > max_evals:
        raise FamilyTooLarge(f"L_phi sweep needs about {work} evaluations, limit is {max_evals}")

    best = 0.0
    for t in range(spec.m_fut):
        seen = set()
        for x in family.paths:
            if F.claims_non_anticipative:
                key = x.prefix_key(t)
                if key in seen:
                    continue
                seen.add(key)
            base = F(t, x)
            t0 = spec.time(t)
            for v in probes:
                z = lip_extension(t, x, v)
                for s in range(t + 1, spec.m_fut + 1):
                    best = max(best, abs(F(s, z) - base) / (spec.time(s) - t0))
    return best
