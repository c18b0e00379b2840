"""Discretized path space C([-h, T], R^n).

Paths are piecewise-linear interpolants of node samples on a grid that is
uniform on [-h, 0] and, separately, on [0, T]. Every evaluation in the
package reads node samples only, so sup-distances are exact maxima over
nodes and path families are finite.

Time indices (``t_idx``) always count nodes of [0, T]: ``t_idx = 0`` is
time 0 and ``t_idx = m_fut`` is the horizon T.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

DEFAULT_CAP = 10**6
KEY_DECIMALS = 10


class FamilyTooLarge(RuntimeError):
    """Enumeration would exceed the configured path cap."""


@dataclass(frozen=True)
class GridSpec:
    """Grid on [-h, T] with ``m_past`` intervals before 0 and ``m_fut`` after."""

    h: float
    T: float
    n: int = 1
    m_past: int = 0
    m_fut: int = 1

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if self.h < 0:
            raise ValueError(f"delay h must be non-negative, got {self.h}")
        if self.n < 1:
            raise ValueError(f"state dimension must be positive, got {self.n}")
        if self.m_fut < 1:
            raise ValueError("m_fut must be at least 1")
        if self.h > 0 and self.m_past < 1:
            raise ValueError("h > 0 needs at least one past interval")
        if self.h == 0 and self.m_past != 0:
            raise ValueError("h == 0 admits no past intervals (m_past must be 0)")

    @cached_property
    def times(self) -> np.ndarray:
        fut = np.linspace(0.0, self.T, self.m_fut + 1)
        if self.m_past == 0:
            out = fut
        else:
            out = np.concatenate([np.linspace(-self.h, 0.0, self.m_past + 1)[:-1], fut])
        out.setflags(write=False)
        return out

    @property
    def n_nodes(self) -> int:
        return self.m_past + self.m_fut + 1

    @property
    def zero(self) -> int:
        """Array index of the node t = 0."""
        return self.m_past

    @property
    def dt(self) -> float:
        return self.T / self.m_fut

    @property
    def dt_past(self) -> float:
        return self.h / self.m_past if self.m_past else 0.0

    def node(self, t_idx: int) -> int:
        """Array index of future node ``t_idx``."""
        if not 0 <= t_idx <= self.m_fut:
            raise IndexError(f"time index {t_idx} outside [0, {self.m_fut}]")
        return self.m_past + t_idx

    def time(self, t_idx: int) -> float:
        return float(self.times[self.node(t_idx)])

    def refined(self, factor: int) -> "GridSpec":
        return GridSpec(self.h, self.T, self.n, self.m_past * factor, self.m_fut * factor)


def path_key(samples) -> bytes:
    """Hashable key of a sample array, robust to last-ulp drift."""
    arr = np.round(np.asarray(samples, dtype=float), KEY_DECIMALS) + 0.0
    return arr.tobytes()


@dataclass(frozen=True, eq=False)
class GridPath:
    """Node samples of a continuous path, shape ``(n_nodes, n)``."""

    spec: GridSpec
    samples: np.ndarray

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1) if self.spec.n == 1 else arr.reshape(1, -1)
        if arr.shape != (self.spec.n_nodes, self.spec.n):
            raise ValueError(
                f"expected samples of shape {(self.spec.n_nodes, self.spec.n)}, got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("path samples must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __eq__(self, other):
        if not isinstance(other, GridPath):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.samples, other.samples)

    def __hash__(self):
        return hash((self.spec, self.samples.tobytes()))

    def __repr__(self):
        return f"GridPath({self.samples[:, 0].tolist() if self.spec.n == 1 else self.samples.tolist()})"

    def at(self, t_idx: int) -> np.ndarray:
        """x(t) at future node ``t_idx``."""
        return self.samples[self.spec.node(t_idx)]

    def at_time(self, time: float) -> np.ndarray:
        """Linear interpolation at an arbitrary time in [-h, T]."""
        ts = self.spec.times
        if time < ts[0] - 1e-12 or time > ts[-1] + 1e-12:
            raise ValueError(f"time {time} outside [{ts[0]}, {ts[-1]}]")
        return np.array([np.interp(time, ts, self.samples[:, i]) for i in range(self.spec.n)])

    @property
    def key(self) -> bytes:
        return path_key(self.samples)

    def prefix_key(self, t_idx: int) -> bytes:
        """Key of the history up to node ``t_idx``; equal for equal stopped paths."""
        return path_key(self.samples[: self.spec.node(t_idx) + 1])

    def refined(self, factor: int) -> "GridPath":
        """The same piecewise-linear path sampled on a grid ``factor`` times finer."""
        spec = self.spec.refined(factor)
        cols = [np.interp(spec.times, self.spec.times, self.samples[:, i]) for i in range(spec.n)]
        return GridPath(spec, np.stack(cols, axis=1))

    def to_csv(self, target=None) -> str:
        """One row per node: time, then coordinates."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time"] + [f"x{i}" for i in range(self.spec.n)])
        for time, row in zip(self.spec.times, self.samples):
            writer.writerow([repr(float(time))] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text

    @classmethod
    def from_csv(cls, spec: GridSpec, source) -> "GridPath":
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        rows = list(csv.reader(io.StringIO(text)))[1:]
        times = np.array([float(r[0]) for r in rows])
        if times.shape != spec.times.shape or not np.allclose(times, spec.times):
            raise ValueError("CSV node times do not match the grid spec")
        return cls(spec, np.array([[float(v) for v in r[1:]] for r in rows]))


@dataclass(frozen=True)
class PointedPath:
    """A pair (t, x(.)) with t a node of [0, T]."""

    t_idx: int
    path: GridPath

    def __post_init__(self):
        self.path.spec.node(self.t_idx)

    @property
    def time(self) -> float:
        return self.path.spec.time(self.t_idx)


def _check_same_spec(x: GridPath, y: GridPath):
    if x.spec != y.spec:
        raise ValueError("paths live on different grids")


def stop(path: GridPath, t_idx: int) -> GridPath:
    """The stopped path x(. ^ t): frozen at x(t) after t."""
    i = path.spec.node(t_idx)
    out = np.array(path.samples)
    out[i + 1 :] = out[i]
    return GridPath(path.spec, out)


def sup_sq_upto(x: GridPath, y: GridPath, t_idx: int) -> float:
    """Max over nodes xi <= t of ||x(xi) - y(xi)||^2."""
    _check_same_spec(x, y)
    i = x.spec.node(t_idx)
    d = x.samples[: i + 1] - y.samples[: i + 1]
    return float(np.max(np.sum(d * d, axis=1)))


def sup_dist_upto(x: GridPath, y: GridPath, t_idx: int) -> float:
    """Max over nodes xi <= t of ||x(xi) - y(xi)||."""
    return float(np.sqrt(sup_sq_upto(x, y, t_idx)))


def sup_dist(x: GridPath, y: GridPath) -> float:
    return sup_dist_upto(x, y, x.spec.m_fut)


def lip_extension(t_idx: int, x: GridPath, v) -> GridPath:
    """Stop x at t and continue with constant velocity v on (t, T]."""
    spec = x.spec
    if t_idx >= spec.m_fut:
        raise IndexError("cannot extend from the horizon node")
    i = spec.node(t_idx)
    v = np.broadcast_to(np.asarray(v, dtype=float), (spec.n,))
    out = np.array(x.samples)
    steps = np.arange(1, spec.m_fut - t_idx + 1)[:, None]
    out[i + 1 :] = out[i] + v * (steps * spec.dt)
    return GridPath(spec, out)


def lip_constant(path: GridPath) -> float:
    """Lipschitz constant of the piecewise-linear path restricted to [0, T]."""
    spec = path.spec
    fut = path.samples[spec.zero :]
    diffs = np.linalg.norm(np.diff(fut, axis=0), axis=1)
    return float(np.max(diffs / np.diff(spec.times[spec.zero :])))


def _as_vectors(values, n: int) -> tuple[tuple[float, ...], ...]:
    out = []
    for v in values:
        arr = np.atleast_1d(np.asarray(v, dtype=float))
        if arr.shape != (n,):
            raise ValueError(f"vector {v!r} does not have dimension {n}")
        out.append(tuple(float(a) + 0.0 for a in arr))
    return tuple(out)


@dataclass(frozen=True)
class PathFamily:
    """Finite compact family of Lipschitz grid paths.

    Paths start on the lattice ``start_values`` and move with per-interval
    velocities from ``velocity_alphabet`` on [-h, 0]. On [0, T] the zero
    velocity is always admitted as well, which makes the family closed under
    stopping and under constant-velocity extension by alphabet velocities.
    """

    spec: GridSpec
    slope_bound: float
    velocity_alphabet: tuple = ((0.0,),)
    start_values: tuple = ((0.0,),)
    start_box: float | None = None
    cap: int = DEFAULT_CAP
    include_stopped: bool = field(default=True, init=False)

    def __post_init__(self):
        n = self.spec.n
        alphabet = _as_vectors(self.velocity_alphabet, n)
        starts = _as_vectors(self.start_values, n)
        if not alphabet:
            raise ValueError("velocity alphabet must not be empty")
        if not starts:
            raise ValueError("start lattice must not be empty")
        if len(set(alphabet)) != len(alphabet) or len(set(starts)) != len(starts):
            raise ValueError("duplicate entries in alphabet or start lattice")
        for v in alphabet:
            if np.linalg.norm(v) > self.slope_bound * (1 + 1e-12):
                raise ValueError(f"velocity {v} exceeds slope bound {self.slope_bound}")
        box = self.start_box
        if box is None:
            box = max(float(np.linalg.norm(s)) for s in starts)
        for s in starts:
            if np.linalg.norm(s) > box * (1 + 1e-12):
                raise ValueError(f"start value {s} lies outside the start box {box}")
        object.__setattr__(self, "velocity_alphabet", alphabet)
        object.__setattr__(self, "start_values", starts)
        object.__setattr__(self, "start_box", float(box))

    @property
    def future_alphabet(self) -> tuple:
        zero = (0.0,) * self.spec.n
        if zero in self.velocity_alphabet:
            return self.velocity_alphabet
        return self.velocity_alphabet + (zero,)

    @property
    def size_bound(self) -> int:
        """Number of velocity words, i.e. paths before deduplication."""
        return (
            len(self.start_values)
            * len(self.velocity_alphabet) ** self.spec.m_past
            * len(self.future_alphabet) ** self.spec.m_fut
        )

    def check_cap(self, cap: int | None = None):
        cap = self.cap if cap is None else cap
        if self.size_bound > cap:
            raise FamilyTooLarge(f"family would hold {self.size_bound} paths, cap is {cap}")

    @cached_property
    def array(self) -> np.ndarray:
        """All member samples, shape ``(n_paths, n_nodes, n)``, in enumeration order."""
        self.check_cap()
        spec = self.spec
        starts = np.array(self.start_values)
        past = np.array(self.velocity_alphabet) * spec.dt_past
        fut = np.array(self.future_alphabet) * spec.dt
        past_words = list(itertools.product(range(len(past)), repeat=spec.m_past))
        fut_words = np.array(list(itertools.product(range(len(fut)), repeat=spec.m_fut)), dtype=int)

        blocks = []
        for s in starts:
            for pw in past_words:
                incs = np.empty((len(fut_words), spec.n_nodes - 1, spec.n))
                incs[:, : spec.m_past] = past[list(pw)]
                incs[:, spec.m_past :] = fut[fut_words]
                samples = np.empty((len(fut_words), spec.n_nodes, spec.n))
                samples[:, 0] = s
                samples[:, 1:] = s + np.cumsum(incs, axis=1)
                blocks.append(samples)
        arr = np.concatenate(blocks, axis=0)
        _, first = np.unique(arr.reshape(len(arr), -1), axis=0, return_index=True)
        arr = arr[np.sort(first)]
        arr.setflags(write=False)
        return arr

    @cached_property
    def paths(self) -> list[GridPath]:
        return [GridPath(self.spec, s) for s in self.array]

    @cached_property
    def _index(self) -> dict[bytes, int]:
        return {path_key(s): i for i, s in enumerate(self.array)}

    def __len__(self):
        return len(self.array)

    def index(self, path: GridPath) -> int:
        """Position of ``path`` in the enumeration; KeyError for non-members."""
        return self._index[path.key]

    def __contains__(self, path: GridPath) -> bool:
        return path.spec == self.spec and path.key in self._index

    @classmethod
    def from_config(cls, cfg: dict) -> "PathFamily":
        spec = GridSpec(
            h=float(cfg.get("h", 0.0)),
            T=float(cfg["T"]),
            n=int(cfg.get("n", 1)),
            m_past=int(cfg.get("m_past", 0)),
            m_fut=int(cfg["m_fut"]),
        )
        return cls(
            spec,
            slope_bound=float(cfg["slope_bound"]),
            velocity_alphabet=tuple(cfg["velocity_alphabet"]),
            start_values=tuple(cfg.get("start_values", [[0.0] * spec.n])),
            start_box=cfg.get("start_box"),
            cap=int(cfg.get("cap", DEFAULT_CAP)),
        )

    def to_config(self) -> dict:
        return {
            "h": self.spec.h,
            "T": self.spec.T,
            "n": self.spec.n,
            "m_past": self.spec.m_past,
            "m_fut": self.spec.m_fut,
            "slope_bound": self.slope_bound,
            "velocity_alphabet": [list(v) for v in self.velocity_alphabet],
            "start_values": [list(s) for s in self.start_values],
            "start_box": self.start_box,
            "cap": self.cap,
        }


def load_family(path) -> PathFamily:
    return PathFamily.from_config(json.loads(Path(path).read_text()))


def enumerate_family(family: PathFamily) -> list[GridPath]:
    """Every member path of ``family`` in deterministic order."""
    return family.paths
