"""Command-line driver: ``cihj {penalty-suite,ci-check,solve,compare,all} --config FILE``.

Exit status: 0 when every check passes, 1 on a failed check, 2 on a
configuration error (nothing is written), 3 when a family exceeds its
enumeration cap. Flags fall back to ``CIHJ_CONFIG``, ``CIHJ_OUT``,
``CIHJ_THREADS``, ``CIHJ_CAP`` and ``CIHJ_NORMALIZE_TIMESTAMPS``. A config
with a ``families`` list runs every command once per family and writes each
family's output to ``family_<i>/``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .calculus import check_non_anticipative, lphi_constant
from .control import (
    PathNotInFamily,
    ProjectionDefectError,
    ValueTable,
    as_functional,
    ball_samples,
    bellman_hamiltonian,
    check_assumption_A2,
    check_assumption_A3,
    dpp_residual,
    problem_from_config,
    solve_dp,
)
from .doubling import BoundaryViolation, comparison_verdict, validate_schedule
from .paths import FamilyTooLarge, PathFamily, PointedPath
from .suite import PROPERTIES, ci_agreement, naive_exhibit, penalty_suite

SCHEMA = "cihj/1"
COMMANDS = ("penalty-suite", "ci-check", "solve", "compare", "all")
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_CAP = 0, 1, 2, 3
DETAIL_LIMIT = 100_000

log = logging.getLogger("cihj")


class ConfigError(ValueError):
    pass


# -- configuration -----------------------------------------------------------------


@dataclass
class ExperimentConfig:
    family: dict
    penalty: dict
    schedule: tuple
    problem: Optional[dict]
    seeds: dict
    ci_check: dict
    compare: dict
    output: Optional[str]
    base_dir: Path
    digest: str
    detail_limit: int = DETAIL_LIMIT
    raw: dict = field(default_factory=dict)
    families: tuple = ()

    def make_family(self, cfg: Optional[dict] = None, cap: Optional[int] = None) -> PathFamily:
        cfg = dict(self.family if cfg is None else cfg)
        if cap is not None:
            cfg["cap"] = cap
        family = PathFamily.from_config(cfg)
        family.check_cap()
        return family


def _digest(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _load_problem(ref, base: Path) -> dict:
    if isinstance(ref, dict):
        return ref
    path = (base / ref) if not os.path.isabs(ref) else Path(ref)
    if not path.is_file():
        raise ConfigError(f"problem file {ref!r} does not exist")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"problem file {ref!r} is not valid JSON: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    families = doc.get("families")
    if families is not None and (not isinstance(families, list) or not families):
        raise ConfigError("'families' must be a non-empty list of family sections")
    if "family" not in doc and not families:
        raise ConfigError("config lacks the 'family' section")
    family = doc["family"] if "family" in doc else families[0]
    base = path.resolve().parent
    try:
        for fam in [family] + list(families or []):
            PathFamily.from_config(fam)
        schedule = validate_schedule(doc.get("schedule", [[1.0, 1.0]]))
        problem = _load_problem(doc["problem"], base) if doc.get("problem") is not None else None
        if problem is not None:
            problem_from_config(problem, int(family.get("n", 1)))
        ci = dict(doc.get("ci_check", {}))
        if "family" in ci:
            PathFamily.from_config(ci["family"])
        for side in ("phi1", "phi2"):
            spec = doc.get("compare", {}).get(side)
            if spec is not None:
                _check_functional_spec(spec, base)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    return ExperimentConfig(
        family=family,
        penalty=dict(doc.get("penalty", {})),
        schedule=schedule,
        problem=problem,
        seeds=dict(doc.get("seeds", {})),
        ci_check=ci,
        compare=dict(doc.get("compare", {})),
        output=doc.get("output"),
        base_dir=base,
        digest=_digest({**doc, "problem": problem}),
        detail_limit=int(doc.get("detail_limit", DETAIL_LIMIT)),
        raw=doc,
        families=tuple(families or ()),
    )


def _check_functional_spec(spec, base: Path):
    if not isinstance(spec, dict):
        raise ConfigError("functional specification must be an object")
    if "table" in spec:
        if not (base / spec["table"]).is_file():
            raise ConfigError(f"value-table file {spec['table']!r} does not exist")
    elif spec.get("builtin") != "value":
        raise ConfigError(f"unknown functional specification {spec!r}")


# -- output helpers -------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(doc) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


@dataclass
class CommandResult:
    name: str
    passed: bool
    summary: dict
    files: dict  # file name -> text


# -- commands --------------------------------------------------------------------------------


def cmd_penalty_suite(cfg: ExperimentConfig, threads: int, cap: Optional[int]) -> CommandResult:
    family = cfg.make_family(cap=cap)
    L = cfg.penalty.get("L")
    res = penalty_suite(family, L=L, threads=threads, detail=family_quads(family) <= cfg.detail_limit)
    summary = dict(
        paths=res.n_paths,
        nodes=res.n_nodes,
        L=res.L,
        quadruples=res.quadruples,
        violations=res.violations,
        min_margins=res.min_margins,
        max_two_form_rel=res.max_two_form_rel,
        lower_bound_not_applicable=res.not_applicable,
        passed=res.passed,
    )
    if res.blocks and res.blocks[0].detail is not None:
        header = ["t_idx", "tau_idx", "x_index", "y_index", "V", "P", "Q_norm", "margin_sup", "margin_time", "margin_P", "margin_Q", "two_form_rel", "structural_ok"]
        rows = []
        for b in res.blocks:
            d = b.detail
            P = d["V"].shape[0]
            for i in range(P):
                for j in range(P):
                    rows.append([b.t_idx, b.tau_idx, i, j, d["V"][i, j], d["P"][i, j], d["Q"][i, j], d["m_sup"][i, j], d["m_time"][i, j], d["m_p"][i, j], d["m_q"][i, j], d["rel"][i, j], int(not d["bad"][i, j])])
    else:
        header = ["t_idx", "tau_idx", "pairs"] + [f"violations_{k}" for k in PROPERTIES] + ["min_margin_sup", "min_margin_time", "min_margin_P", "min_margin_Q", "max_two_form_rel"]
        rows = [
            [b.t_idx, b.tau_idx, b.pairs] + [b.violations[k] for k in PROPERTIES]
            + [b.min_margins["lower_bound_sup"], b.min_margins["lower_bound_time"], b.min_margins["derivative_bound_P"], b.min_margins["derivative_bound_Q"], b.max_two_form_rel]
            for b in res.blocks
        ]
    return CommandResult("penalty-suite", res.passed, summary, {"penalty_suite.csv": _csv(header, rows)})


def family_quads(family: PathFamily) -> int:
    return (len(family) * (family.spec.m_fut + 1)) ** 2


def cmd_ci_check(cfg: ExperimentConfig, threads: int, cap: Optional[int]) -> CommandResult:
    ci = cfg.ci_check
    family = cfg.make_family(ci.get("family"), cap=cap)
    n = int(ci.get("samples", 200))
    factors = tuple(int(f) for f in ci.get("factors", (1, 2, 4)))
    rtol = float(ci.get("rtol", 0.05))
    agr = ci_agreement(family, n, factors, seed=int(cfg.seeds.get("ci", 0)), L=cfg.penalty.get("L"))
    ex_grid = dict(ci.get("exhibit", {}))
    ex = naive_exhibit(L=float(ex_grid.pop("L", family.slope_bound)), **ex_grid)
    passed = agr.n_valid >= min(n, 100) and agr.halving_failures == 0 and agr.absolute_failures(rtol) == 0 and ex.passed()
    summary = dict(
        samples=agr.n_valid,
        factors=list(factors),
        halving_failures=agr.halving_failures,
        absolute_failures=agr.absolute_failures(rtol),
        worst_ratio=agr.worst_ratio,
        rtol=rtol,
        exhibit=dict(
            steps=list(ex.steps),
            naive_residuals=list(ex.naive_residuals),
            penalty_residuals=list(ex.penalty_residuals),
            passed=ex.passed(),
        ),
        passed=passed,
    )
    header = ["side", "t_idx", "anchor_idx", "x_index", "y_index"] + [f"error_x{f}" for f in factors] + [f"residual_x{f}" for f in factors] + ["scale", "halving_ok", "absolute_ok"]
    rows = [
        [s.side, s.t_idx, s.anchor_idx, s.x_index, s.y_index, *s.errors, *s.residuals, s.scale, int(s.halving_ok), int(s.absolute_ok(rtol))]
        for s in agr.samples
    ]
    return CommandResult("ci-check", passed, summary, {"ci_check.csv": _csv(header, rows)})


def _require_problem(cfg: ExperimentConfig):
    if cfg.problem is None:
        raise ConfigError("this command needs a 'problem' section")
    return problem_from_config(cfg.problem, int(cfg.family.get("n", 1)))


def cmd_solve(cfg: ExperimentConfig, threads: int, cap: Optional[int]) -> CommandResult:
    data = _require_problem(cfg)
    family = cfg.make_family(cap=cap)
    table = solve_dp(data, family)
    F = as_functional(table)
    spec = family.spec
    samples = [PointedPath(k, p) for k in range(spec.m_fut + 1) for p in family.paths]
    residual = dpp_residual(table, data)
    na = check_non_anticipative(F, samples)
    lphi = lphi_constant(F, family)
    H = bellman_hamiltonian(data)
    seed = int(cfg.seeds.get("assumptions", 0))
    radii = [float(r) for r in cfg.raw.get("assumption_radii", (1.0, 2.0, 4.0))]
    a2 = check_assumption_A2(H, family, ball_samples(spec.n, max(radii), 9, seed), max_pairs=20000, seed=seed)
    a3 = check_assumption_A3(H, family, radii, max_pairs=20000, seed=seed)
    passed = residual == 0.0 and na == 0.0 and math.isfinite(lphi)
    summary = dict(
        entries=sum(len(layer) for layer in table.layers),
        dpp_residual=residual,
        non_anticipative_deviation=na,
        lphi=lphi,
        max_projection_defect=table.max_defect,
        assumption_A2=a2,
        assumption_A3={repr(r): v for r, v in a3.items()},
        passed=passed,
    )
    return CommandResult("solve", passed, summary, {"value_table.csv": table.to_csv()})


def _build_functional(spec: dict, cfg: ExperimentConfig, family, base_table: Optional[ValueTable]):
    if "table" in spec:
        return ValueTable.from_csv(family, cfg.base_dir / spec["table"]).as_array()
    if base_table is None:
        raise ConfigError("builtin 'value' needs a problem")
    A = base_table.as_array().copy()
    spec_t = family.spec
    if "shift" in spec:
        A += float(spec["shift"])
    if "bump" in spec:
        times = spec_t.times[spec_t.zero :]
        A += float(spec["bump"]) * (4.0 * times * (spec_t.T - times) / spec_t.T**2)[:, None]
    if "perturb" in spec:
        p = spec["perturb"]
        k, member = int(p["t_idx"]), int(p["member"])
        if not (0 <= member < len(family) and 0 <= k <= spec_t.m_fut):
            raise ConfigError(f"perturbation ({k}, member {member}) lies outside the family")
        path = family.paths[member]
        A = tabulated_perturb(A, family, k, path, float(p["amount"]))
    return A


def tabulated_perturb(A: np.ndarray, family, t_idx: int, path, amount: float) -> np.ndarray:
    """Add ``amount`` at (t_idx, every member sharing path's history up to t_idx)."""
    key = path.prefix_key(t_idx)
    out = A.copy()
    for i, p in enumerate(family.paths):
        if p.prefix_key(t_idx) == key:
            out[t_idx, i] += amount
    return out


def cmd_compare(cfg: ExperimentConfig, threads: int, cap: Optional[int]) -> CommandResult:
    data = _require_problem(cfg)
    family = cfg.make_family(cap=cap)
    spec1 = cfg.compare.get("phi1", {"builtin": "value"})
    spec2 = cfg.compare.get("phi2", {"builtin": "value"})
    table = solve_dp(data, family)
    F1 = _build_functional(spec1, cfg, family, table)
    F2 = _build_functional(spec2, cfg, family, table)
    H = bellman_hamiltonian(data)
    try:
        rep = comparison_verdict(F1, F2, family, H, cfg.schedule, threads=threads)
    except BoundaryViolation as exc:
        summary = dict(boundary_violation=dict(message=str(exc), worst=exc.worst, member=exc.member), passed=False)
        return CommandResult("compare", False, summary, {"compare.csv": _csv(["epsilon", "delta"], [])})
    doc = rep.to_dict()
    summary = dict(report=doc, passed=rep.margins_ok)
    names = sorted(rep.points[0].estimates) if rep.points else []
    header = ["epsilon", "delta", "t_idx", "tau_idx", "value", "ties", "below_eps_star", "hamiltonian_gap", "gap_flag"] + [f"margin_{k}" for k in names]
    rows = []
    for p in rep.points:
        m = p.maximizer
        gap = "" if p.hamiltonian_gap is None else p.hamiltonian_gap
        rows.append([p.epsilon, p.delta, m.t_idx, m.tau_idx, m.value, m.ties, int(p.below_eps_star), gap, int(p.gap_flag)] + [p.estimates[k].margin for k in names])
    return CommandResult("compare", rep.margins_ok, summary, {"compare.csv": _csv(header, rows)})


RUNNERS = {
    "penalty-suite": cmd_penalty_suite,
    "ci-check": cmd_ci_check,
    "solve": cmd_solve,
    "compare": cmd_compare,
}


# -- entry point ---------------------------------------------------------------------------


def _env_bool(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cihj", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", default=os.environ.get("CIHJ_CONFIG"), help="experiment JSON (env CIHJ_CONFIG)")
    p.add_argument("--out", default=os.environ.get("CIHJ_OUT"), help="output directory (env CIHJ_OUT)")
    p.add_argument("--threads", type=int, default=int(os.environ.get("CIHJ_THREADS", "1")), help="worker threads (env CIHJ_THREADS)")
    p.add_argument("--cap", type=int, default=int(os.environ["CIHJ_CAP"]) if os.environ.get("CIHJ_CAP") else None, help="enumeration cap in paths (env CIHJ_CAP)")
    p.add_argument("--normalize-timestamps", action="store_true", default=_env_bool("CIHJ_NORMALIZE_TIMESTAMPS"), help="omit wall-clock data from JSON (env CIHJ_NORMALIZE_TIMESTAMPS)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _envelope(name: str, cfg: ExperimentConfig, body: dict, passed: bool, runtime: float, normalize: bool) -> dict:
    return dict(
        schema=SCHEMA,
        command=name,
        config_digest=cfg.digest,
        passed=passed,
        result=body,
        runtime_seconds=None if normalize else round(runtime, 6),
        timestamp=None if normalize else _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        version=__version__,
    )


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    try:
        if not args.config:
            raise ConfigError("no config given (use --config or CIHJ_CONFIG)")
        cfg = load_config(args.config)
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        if args.cap is not None and args.cap < 1:
            raise ConfigError("--cap must be positive")
        out = Path(args.out or cfg.output or "cihj-out")
        if not args.out and cfg.output and not os.path.isabs(cfg.output):
            out = cfg.base_dir / cfg.output
        names = [c for c in COMMANDS if c != "all"] if args.command == "all" else [args.command]
        if any(n in ("solve", "compare") for n in names) and cfg.problem is None:
            if args.command == "all":
                names = [n for n in names if n not in ("solve", "compare")]
            else:
                raise ConfigError(f"{args.command} needs a 'problem' section")

        # global-family mode: every command once per family, one subdirectory each
        runs = [("", cfg)]
        if cfg.families:
            runs = [(f"family_{i}/", replace(cfg, family=fam)) for i, fam in enumerate(cfg.families)]
        results = []
        for prefix, sub in runs:
            for name in names:
                t0 = time.perf_counter()
                res = RUNNERS[name](sub, args.threads, args.cap)
                results.append((prefix, sub, res, time.perf_counter() - t0))
    except (ConfigError, ProjectionDefectError, PathNotInFamily) as exc:
        print(f"cihj: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FamilyTooLarge as exc:
        print(f"cihj: resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP

    files = {}
    overview = {}
    for prefix, sub, res, dt in results:
        stem = res.name.replace("-", "_")
        files[f"{prefix}{stem}.json"] = dumps(_envelope(res.name, sub, res.summary, res.passed, dt, args.normalize_timestamps))
        files.update({prefix + k: v for k, v in res.files.items()})
        overview[prefix + res.name] = res.passed
    all_ok = all(overview.values())
    if args.command == "all":
        digests = {k: hashlib.sha256(v.encode()).hexdigest() for k, v in sorted(files.items()) if k.endswith(".csv")}
        body = dict(commands=overview, csv_digests=digests)
        total = sum(r[3] for r in results)
        files["summary.json"] = dumps(_envelope("all", cfg, body, all_ok, total, args.normalize_timestamps))
    for fname, text in sorted(files.items()):
        write_atomic(out / fname, text)
    for name, ok in overview.items():
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if all_ok else EXIT_CHECK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
