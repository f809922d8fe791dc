"""Config-driven studies: convergence orders, stability envelopes, two-index tables, delay runs.

A config is a JSON object::

    {
      "study": "convergence" | "two-index" | "delay",
      "problem": {"name": "nilpotent-pair", "params": {"dim": 2}},
      "schemes": ["sequential", "strang", "weighted(0.5)"],
      "n_values": [4, 8, 16, 32],
      "m_values": [16, 32, 64],            # two-index only
      "q_values": [64, 128, 256, 512],     # delay oracle ladder (doubling)
      "t_final": 1.0,
      "output_dir": "out",
      "stability": {"n_max": 16},
      "delay": {"reference": "oracle", "modes": [1], "error_norm": "head"},
      "tolerances": {"order": 0.15, "two_index_ratio": 10.0},
      "order_bounds": {"weighted(0.25)": [0.85, 1.3]}
    }

Unknown keys are rejected. Outputs are ``errors.csv``, ``orders.csv``,
``stability.csv`` and ``summary.txt``; numbers use ``%.17g``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import EvolveSpec, ExactSolution, Scheme, fit_order, split_evolve, stability_scan
from .delay import (
    DelayState,
    delay_split_evolve,
    delay_split_trajectory,
    delay_step_matrices,
    init_state,
    phase_norm,
    phase_norm_bound,
    richardson_oracle,
    sample_history,
    write_history_csv,
    write_trajectory_csv,
)
from .problems import PROBLEMS, delay_exponential_solution, get_problem
from .spatial import two_index_error_table

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "run_config",
    "fit_and_report",
    "read_errors_csv",
    "default_seed",
]

STUDIES = ("convergence", "two-index", "delay")
TOP_KEYS = {
    "study", "problem", "schemes", "n_values", "m_values", "q_values", "t_final", "output_dir",
    "stability", "delay", "tolerances", "order_bounds",
}
TOLERANCE_KEYS = {"order", "two_index_ratio", "envelope_rtol", "delay_reduction"}
DEFAULT_TOLERANCES = {"order": 0.15, "two_index_ratio": 10.0, "envelope_rtol": 1e-12, "delay_reduction": 5.0}
DELAY_KEYS = {"reference", "modes", "error_norm"}
STEP_MATRIX_MAX_DIM = 4096
STABILITY_HEADER = ["scheme", "variant", "level", "M_hat", "omega_hat", "max_norm", "dominated"]
DELAY_STABILITY_HEADER = ["n", "h", "T_bound", "T_limit", "S_bound", "S_limit", "within"]
DELAY_PROBLEMS = ("scalar-delay", "delay-diffusion")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def default_seed():
    """Seed from ``SPLITKIT_SEED``, else 0."""
    raw = os.environ.get("SPLITKIT_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"SPLITKIT_SEED must be an integer, got {raw!r}") from None


def _strictly_increasing(values, label):
    if not isinstance(values, list) or not values or not all(isinstance(v, int) and v >= 1 for v in values):
        raise ConfigError(f"{label} must be a non-empty list of positive integers")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"{label} must be strictly increasing, got {values}")
    return values


@dataclass
class ExperimentConfig:
    study: str
    problem: str
    params: dict
    schemes: list
    n_values: list
    t_final: float
    output_dir: str = "splitkit-out"
    m_values: list = field(default_factory=list)
    q_values: list = field(default_factory=lambda: [64, 128, 256, 512])
    stability: dict = field(default_factory=dict)
    delay: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    order_bounds: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key in ("study", "problem", "schemes", "n_values", "t_final"):
            if key not in raw:
                raise ConfigError(f"missing required key {key!r}")
        study = raw["study"]
        if study not in STUDIES:
            raise ConfigError(f"unknown study {study!r}; expected one of {', '.join(STUDIES)}")
        prob = raw["problem"]
        if isinstance(prob, str):
            prob = {"name": prob}
        if not isinstance(prob, dict) or set(prob) - {"name", "params"} or "name" not in prob:
            raise ConfigError("problem must be a name or {'name': ..., 'params': {...}}")
        if prob["name"] not in PROBLEMS:
            raise ConfigError(f"unknown problem {prob['name']!r}; known: {', '.join(sorted(PROBLEMS))}")
        params = dict(prob.get("params", {}))
        try:
            schemes = [Scheme.parse(s) for s in raw["schemes"]]
        except (ValueError, AttributeError) as exc:
            raise ConfigError(f"bad scheme list: {exc}") from None
        if not schemes:
            raise ConfigError("schemes must not be empty")
        t_final = raw["t_final"]
        if not isinstance(t_final, (int, float)) or not t_final > 0 or not math.isfinite(t_final):
            raise ConfigError(f"t_final must be a positive number, got {t_final!r}")
        tolerances = dict(DEFAULT_TOLERANCES)
        tol_raw = raw.get("tolerances", {})
        if set(tol_raw) - TOLERANCE_KEYS:
            raise ConfigError(f"unknown tolerance keys: {', '.join(sorted(set(tol_raw) - TOLERANCE_KEYS))}")
        tolerances.update({k: float(v) for k, v in tol_raw.items()})
        stability = dict(raw.get("stability", {}))
        if set(stability) - {"n_max", "variants"}:
            raise ConfigError(f"unknown stability keys: {', '.join(sorted(set(stability) - {'n_max', 'variants'}))}")
        delay = dict(raw.get("delay", {}))
        if set(delay) - DELAY_KEYS:
            raise ConfigError(f"unknown delay keys: {', '.join(sorted(set(delay) - DELAY_KEYS))}")
        order_bounds = {}
        for label, bounds in raw.get("order_bounds", {}).items():
            if not (isinstance(bounds, list) and len(bounds) == 2 and bounds[0] <= bounds[1]):
                raise ConfigError(f"order bounds for {label!r} must be [low, high]")
            order_bounds[Scheme.parse(label).label] = (float(bounds[0]), float(bounds[1]))
        cfg = cls(
            study=study,
            problem=prob["name"],
            params=params,
            schemes=schemes,
            n_values=_strictly_increasing(raw["n_values"], "n_values"),
            t_final=float(t_final),
            output_dir=str(raw.get("output_dir", "splitkit-out")),
            m_values=_strictly_increasing(raw["m_values"], "m_values") if "m_values" in raw else [],
            q_values=_strictly_increasing(raw["q_values"], "q_values") if "q_values" in raw else [64, 128, 256, 512],
            stability=stability,
            delay=delay,
            tolerances=tolerances,
            order_bounds=order_bounds,
        )
        if study == "two-index" and not cfg.m_values:
            raise ConfigError("two-index study needs m_values")
        if study == "two-index" and cfg.problem != "advection-diffusion":
            raise ConfigError("two-index study needs a problem with a spatial family (advection-diffusion)")
        if study == "delay" and cfg.problem not in DELAY_PROBLEMS:
            raise ConfigError(f"delay study needs one of {', '.join(DELAY_PROBLEMS)}")
        if study == "convergence" and cfg.problem in DELAY_PROBLEMS:
            raise ConfigError("use study 'delay' for delay problems")
        return cfg

    def order_target(self, scheme):
        """``(low, high)`` admissible order interval for ``scheme``."""
        if scheme.label in self.order_bounds:
            return self.order_bounds[scheme.label]
        tol = self.tolerances["order"]
        p = scheme.expected_order
        return p - tol, p + tol


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return ExperimentConfig.from_dict(raw)


def _g(x):
    return "%.17g" % x


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    Path(path).write_text(buf.getvalue())


def read_errors_csv(path):
    """``{scheme: ([(n, error)], reference_norm)}`` from an ``errors.csv`` file."""
    groups = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"scheme", "n", "error"} - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing columns {', '.join(sorted(missing))}")
        for row in reader:
            pts, ref = groups.setdefault(row["scheme"], ([], 0.0))
            pts.append((int(row["n"]), float(row["error"])))
            ref_norm = float(row.get("reference_norm") or 1.0)
            groups[row["scheme"]] = (pts, max(ref, ref_norm))
    return groups


def fit_and_report(errors_csv, orders_csv=None):
    """Fit one order per scheme; returns rows ``(scheme, order, residual, status)``.

    Groups whose errors sit at rounding level are reported as ``exact`` and not
    fitted. Raises ``ConfigError`` when a group has fewer than 3 rows.
    """
    rows = []
    for scheme, (pts, ref_norm) in read_errors_csv(errors_csv).items():
        if len(pts) < 3:
            raise ConfigError(f"scheme {scheme!r}: order fit needs >= 3 rows, got {len(pts)}")
        try:
            p, res = fit_order(pts, reference_norm=ref_norm)
            rows.append((scheme, _g(p), _g(res), "fitted"))
        except ExactSolution:
            rows.append((scheme, "", "", "exact"))
    if orders_csv is not None:
        _write_csv(orders_csv, ["scheme", "order", "residual", "status"], rows)
    return rows


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _finite_or_raise(value, what):
    arr = np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite result in {what}")
    return value


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _problem_params(cfg):
    params = dict(cfg.params)
    if cfg.problem in ("commuting", "nilpotent-pair", "random-stable", "b-zero", "a-zero"):
        params.setdefault("seed", default_seed())
    return params


def _convergence_study(cfg, jobs):
    spec = get_problem(cfg.problem, **_problem_params(cfg))
    x = spec.x0
    ref = _finite_or_raise(spec.reference(cfg.t_final, x), "reference")
    ref_norm = float(np.linalg.norm(ref))

    def cell(item):
        scheme, n = item
        u = split_evolve(scheme, spec.T, spec.S, EvolveSpec(cfg.t_final, n), x)
        return float(np.linalg.norm(_finite_or_raise(u, f"{scheme} n={n}") - ref))

    items = [(s, n) for s in cfg.schemes for n in cfg.n_values]
    errs = _map(cell, items, jobs)
    error_rows = [(s.label, str(n), "", _g(e), _g(ref_norm)) for (s, n), e in zip(items, errs)]

    n_max = int(cfg.stability.get("n_max", 16))
    variants = cfg.stability.get("variants", ["forward", "reversed", "strang-sym"])
    scans = [(s, v) for s in cfg.schemes for v in variants]
    estimates = _map(lambda sv: stability_scan(sv[0], spec.T, spec.S, cfg.t_final, n_max, sv[1]), scans, jobs)
    stab_rows, verdicts = [], []
    for (s, v), est in zip(scans, estimates):
        ok = est.is_finite and est.dominates(cfg.tolerances["envelope_rtol"])
        stab_rows.append((s.label, v, "", _g(est.M_hat), _g(est.omega_hat), _g(est.max_norm_observed), str(ok).lower()))
        verdicts.append(Verdict(f"stability {s.label} {v}", ok, f"M_hat={est.M_hat:.6g} omega_hat={est.omega_hat:.6g}"))
    return error_rows, (STABILITY_HEADER, stab_rows), verdicts, {}


def _two_index_study(cfg, jobs):
    params = dict(cfg.params)
    params["m_values"] = cfg.m_values
    spec = get_problem(cfg.problem, **params)
    fam = spec.family
    ref = spec.reference(cfg.t_final)
    ref_norm = float(np.max(np.abs(ref)))
    tables = _map(
        lambda s: two_index_error_table(s, fam, ref, cfg.n_values, cfg.m_values, spec.x0, cfg.t_final),
        cfg.schemes,
        jobs,
    )
    error_rows, verdicts, extra = [], [], {}
    ratio = cfg.tolerances["two_index_ratio"]
    for s, table in zip(cfg.schemes, tables):
        extra[f"table_{s.label}.csv"] = table.to_csv()
        diag = table.diagonal()
        for k, e in diag:
            error_rows.append((s.label, str(k), str(k), _g(e), _g(ref_norm)))
        if len(diag) >= 2:
            es = [e for _, e in diag]
            decreasing = all(b < a for a, b in zip(es, es[1:]))
            ok = decreasing and es[-1] <= es[0] / ratio
            verdicts.append(Verdict(
                f"two-index {s.label}", ok,
                f"diagonal strictly decreasing={str(decreasing).lower()} E_last/E_first={es[-1] / es[0]:.6g} limit={1 / ratio:.6g}",
            ))

    n_max = int(cfg.stability.get("n_max", 8))
    variants = cfg.stability.get("variants", ["forward", "reversed", "strang-sym"])
    scans = [(s, v, lv) for s in cfg.schemes for v in variants for lv in fam.levels]
    estimates = _map(lambda c: stability_scan(c[0], c[2].T, c[2].S, cfg.t_final, n_max, c[1]), scans, jobs)
    stab_rows = []
    for (s, v, lv), est in zip(scans, estimates):
        ok = est.is_finite and est.dominates(cfg.tolerances["envelope_rtol"])
        stab_rows.append((s.label, v, str(lv.m), _g(est.M_hat), _g(est.omega_hat), _g(est.max_norm_observed), str(ok).lower()))
        verdicts.append(Verdict(f"stability {s.label} {v} m={lv.m}", ok, f"M_hat={est.M_hat:.6g} omega_hat={est.omega_hat:.6g}"))
    return error_rows, (STABILITY_HEADER, stab_rows), verdicts, extra


def _delay_study(cfg, jobs, out_dir, dump_history):
    params = dict(cfg.params)
    problem = get_problem(cfg.problem, **params)
    mode = cfg.delay.get("reference", "oracle" if problem.d == 1 else "exponential")
    modes = tuple(cfg.delay.get("modes", [1]))
    if mode == "oracle":
        hist_fn, _ = delay_exponential_solution(problem, modes, quadrature=False)
        try:
            ref, oracle_err, _ = richardson_oracle(problem, cfg.t_final, hist_fn, cfg.q_values)
        except ValueError as exc:
            raise ConfigError(f"q_values: {exc}") from None
        ref_state_norm = float(np.linalg.norm(ref))
    elif mode == "exponential":
        hist_fn, sol = delay_exponential_solution(problem, modes, quadrature=True)
        ref = sol(cfg.t_final)
        oracle_err = 0.0
        ref_state_norm = float(np.linalg.norm(ref))
    else:
        raise ConfigError(f"unknown delay reference {mode!r}")
    state0 = init_state(hist_fn(0.0), sample_history(hist_fn, problem.q, problem.d))
    # the oracle is only checked on the head; an exact solution also gives the history
    error_norm = cfg.delay.get("error_norm", "head" if mode == "oracle" else "phase")
    if error_norm not in ("head", "phase") or (error_norm == "phase" and mode == "oracle"):
        raise ConfigError(f"error_norm {error_norm!r} is not available with reference {mode!r}")
    if error_norm == "phase":
        exact = DelayState(ref, sample_history(lambda s: sol(cfg.t_final + s), problem.q, problem.d))
        ref_state_norm = phase_norm(exact)

    def cell(item):
        scheme, n = item
        out = delay_split_evolve(scheme, problem, EvolveSpec(cfg.t_final, n), state0)
        _finite_or_raise(out.head, f"{scheme} n={n}")
        if error_norm == "phase":
            return phase_norm(out.combine(1.0, exact, -1.0))
        return float(np.linalg.norm(out.head - ref))

    items = [(s, n) for s in cfg.schemes for n in cfg.n_values]
    errs = _map(cell, items, jobs)
    error_rows = [(s.label, str(n), str(problem.q), _g(e), _g(ref_state_norm)) for (s, n), e in zip(items, errs)]
    verdicts = []
    factor = cfg.tolerances["delay_reduction"]
    for s in cfg.schemes:
        es = [e for (s2, _), e in zip(items, errs) if s2 == s]
        if len(es) >= 2:
            ratio = es[0] / es[-1] if es[-1] > 0 else math.inf
            verdicts.append(Verdict(
                f"delay reduction {s.label}", ratio >= factor,
                f"E(n={cfg.n_values[0]})/E(n={cfg.n_values[-1]})={ratio:.6g} required>={factor:.6g}",
            ))
    if oracle_err:
        verdicts.append(Verdict("delay oracle", oracle_err < 0.01 * min(errs), f"richardson error estimate {oracle_err:.3g}"))

    stab_rows = []
    c_phi = problem.phi_norm_bound
    small = problem.d * (problem.q + 2) <= STEP_MATRIX_MAX_DIM
    for n in cfg.n_values if small else ():
        h = cfg.t_final / n
        try:
            T, S = delay_step_matrices(problem, h)
        except ValueError:
            continue
        tb = phase_norm_bound(T, problem.d, problem.q)
        sb = phase_norm_bound(S, problem.d, problem.q)
        ok = tb <= (1 + h) * (1 + 1e-12) and sb <= (1 + h * c_phi) * (1 + 1e-12)
        stab_rows.append((str(n), _g(h), _g(tb), _g(1 + h), _g(sb), _g(1 + h * c_phi), str(ok).lower()))
        verdicts.append(Verdict(f"delay step bounds n={n}", ok, f"|T(h)|<={tb:.6g} (limit {1 + h:.6g}) |S(h)|<={sb:.6g} (limit {1 + h * c_phi:.6g})"))

    if dump_history:
        scheme, n = cfg.schemes[0], cfg.n_values[0]
        traj = delay_split_trajectory(scheme, problem, EvolveSpec(cfg.t_final, n), state0)
        write_trajectory_csv(out_dir / "trajectory.csv", traj)
        for step, _, st in traj:
            write_history_csv(out_dir / f"history_{step:05d}.csv", st)
    return error_rows, (DELAY_STABILITY_HEADER, stab_rows), verdicts, {}


def run_config(cfg, out_dir=None, jobs=1, dump_history=False):
    """Run one study and write its artifacts; returns ``(exit_code, verdicts)``.

    Exit code 0 means every check passed, 2 means at least one failed.
    """
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.study == "convergence":
        error_rows, stab_rows, verdicts, extra = _convergence_study(cfg, jobs)
    elif cfg.study == "two-index":
        error_rows, stab_rows, verdicts, extra = _two_index_study(cfg, jobs)
    else:
        error_rows, stab_rows, verdicts, extra = _delay_study(cfg, jobs, out, dump_history)

    _write_csv(out / "errors.csv", ["scheme", "n", "level", "error", "reference_norm"], error_rows)
    _write_csv(out / "stability.csv", *stab_rows)
    for name, text in extra.items():
        (out / name).write_text(text)

    order_rows = fit_and_report(out / "errors.csv", out / "orders.csv") if len(cfg.n_values) >= 3 else []
    by_label = {s.label: s for s in cfg.schemes}
    for label, p, _, status in order_rows:
        if cfg.study == "two-index" and label not in cfg.order_bounds:
            # the diagonal mixes spatial and temporal error; no default target
            continue
        if status == "exact":
            verdicts.append(Verdict(f"order {label}", True, "exact"))
            continue
        lo, hi = cfg.order_target(by_label[label])
        p = float(p)
        verdicts.append(Verdict(f"order {label}", lo <= p <= hi, f"p={p:.6g} admissible=[{lo:.6g}, {hi:.6g}]"))

    lines = [f"study {cfg.study} problem {cfg.problem} t_final {cfg.t_final:g}"]
    lines += [v.line() for v in verdicts]
    all_ok = all(v.passed for v in verdicts)
    lines.append("OVERALL " + ("PASS" if all_ok else "FAIL"))
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return (0 if all_ok else 2), verdicts
