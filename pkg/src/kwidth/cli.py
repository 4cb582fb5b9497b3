"""Command-line front end.

Every verb reads one TOML experiment file (or the ``manifest.json`` of an
earlier run) and writes plot-ready CSV files plus a manifest into ``--out``.
The config schema is documented in the README.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .detect import (CALIBRATION_TARGETS, DEFAULT_C2, DEFAULT_C_REG, DEFAULT_C_THEORY, DetectConfig,
                     calibrate_constant, detection_boundary)
from .filtering import Rejected, WeightedSample, check_omega_regularity, run_filters
from .geometry import ConstraintSet, GeometryError, contains
from .sim import (TAIL_LEMMAS, AdversarySpec, contaminate, empirical_tail_check, estimate_error_rates,
                  generate_clean, null_data_fn, trial_stream)
from .widths import WidthProfile, exact_profile_from_axes, width_profile

log = logging.getLogger("kwidth")

THREADS_ENV = "KWIDTH_THREADS"

WIDTHS_COLUMNS = ["k", "width", "value", "raw_width"]
OUTCOME_COLUMNS = ["seed", "group", "trial", "mu_norm", "adversary", "decision", "stage",
                   "statistic", "threshold", "chosen_k", "chosen_branch", "weight_mass"]
RATE_COLUMNS = ["mu_norm", "adversary", "kind", "rate", "ci_lo", "ci_hi", "trials", "failures"]
SWEEP_COLUMNS = ["axis", "value"] + RATE_COLUMNS
REGULARITY_COLUMNS = ["trial", "status", "ratio_i", "ratio_ii", "ratio_iii",
                      "violations_i", "violations_ii", "violations_iii"]
TAIL_COLUMNS = ["lemma", "row", "key", "value"]

SCHEMA = {
    "experiment": {"N", "sigma", "epsilon", "alpha", "trials", "seed", "out"},
    "constraint": {"kind", "dim", "axes", "radius", "p", "power", "scale"},
    "adversary": {"strategy", "epsilon", "scale", "direction", "rows"},
    "mu": {"mode", "vector", "direction", "norms", "boundary_multiples"},
    "solver": {"eps_tol", "budget_scale", "method", "profile_path"},
    "constants": {"c2", "c_theory", "c_pre", "c_low", "c_high", "c_weight", "c_reg"},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    N: int
    sigma: float
    epsilon: float
    alpha: float
    constraint: dict
    adversary: dict = field(default_factory=lambda: {"strategy": "none"})
    mu: dict = field(default_factory=lambda: {"mode": "zero"})
    trials: int = 100
    seed: int = 0
    solver: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    out: Optional[str] = None

    def semantic(self) -> dict:
        """Every field that influences results, in canonical form."""
        return {
            "N": self.N, "sigma": self.sigma, "epsilon": self.epsilon, "alpha": self.alpha,
            "constraint": self.constraint, "adversary": self.adversary, "mu": self.mu,
            "trials": self.trials, "seed": self.seed, "solver": self.solver,
            "constants": self.constants,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_toml_dict(self) -> dict:
        exp = {"N": self.N, "sigma": self.sigma, "epsilon": self.epsilon, "alpha": self.alpha,
               "trials": self.trials, "seed": self.seed}
        return {"experiment": exp, "constraint": self.constraint, "adversary": self.adversary,
                "mu": self.mu, "solver": self.solver, "constants": self.constants}


def _check_keys(section: str, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a table")
    extra = set(data) - SCHEMA[section]
    if extra:
        raise ConfigError(f"{section}.{sorted(extra)[0]}: unknown key")


def _number(section, key, value, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
    return kind(value)


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a decoded config; error messages name the offending key."""
    extra = set(raw) - set(SCHEMA)
    if extra:
        raise ConfigError(f"{sorted(extra)[0]}: unknown section")
    for section in SCHEMA:
        _check_keys(section, raw.get(section, {}))
    exp = raw.get("experiment", {})
    for key in ("N", "epsilon", "alpha"):
        if key not in exp:
            raise ConfigError(f"experiment.{key}: missing")
    if "constraint" not in raw:
        raise ConfigError("constraint: missing")
    N = _number("experiment", "N", exp["N"], int)
    sigma = _number("experiment", "sigma", exp.get("sigma", 1.0))
    epsilon = _number("experiment", "epsilon", exp["epsilon"])
    alpha = _number("experiment", "alpha", exp["alpha"])
    trials = _number("experiment", "trials", exp.get("trials", 100), int)
    seed = _number("experiment", "seed", exp.get("seed", 0), int)
    if N < 1:
        raise ConfigError("experiment.N: must be positive")
    if not sigma > 0:
        raise ConfigError("experiment.sigma: must be positive")
    if not 0 <= epsilon < 0.5:
        raise ConfigError(f"experiment.epsilon: {epsilon} out of range [0, 0.5)")
    if not 0 < alpha < 1:
        raise ConfigError(f"experiment.alpha: {alpha} out of range (0, 1)")
    if trials < 1:
        raise ConfigError("experiment.trials: must be positive")
    if seed < 0:
        raise ConfigError("experiment.seed: must be nonnegative")

    constraint = dict(raw["constraint"])
    _build_constraint(constraint)  # validates
    adversary = dict(raw.get("adversary", {"strategy": "none"}))
    adversary.setdefault("epsilon", epsilon)
    try:
        AdversarySpec.from_dict(adversary)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"adversary: {exc}") from None
    mu = dict(raw.get("mu", {"mode": "zero"}))
    if mu.get("mode", "zero") not in ("zero", "vector", "radial"):
        raise ConfigError(f"mu.mode: unknown mode {mu.get('mode')!r}")
    solver = dict(raw.get("solver", {}))
    if solver.get("method", "ellipsoid") not in ("ellipsoid", "water_filling"):
        raise ConfigError(f"solver.method: unknown method {solver.get('method')!r}")
    if "eps_tol" in solver and not 0 < _number("solver", "eps_tol", solver["eps_tol"]) < 1:
        raise ConfigError("solver.eps_tol: must lie in (0, 1)")
    constants = dict(raw.get("constants", {}))
    for key, value in constants.items():
        if _number("constants", key, value) < 0:
            raise ConfigError(f"constants.{key}: must be nonnegative")
    return ExperimentConfig(N, sigma, epsilon, alpha, constraint, adversary, mu, trials, seed,
                            solver, constants, exp.get("out"))


def _build_constraint(spec: dict) -> ConstraintSet:
    spec = dict(spec)
    if "power" in spec:
        # axes_j = scale * j^power, j = 1..dim
        if "dim" not in spec:
            raise ConfigError("constraint.dim: required with constraint.power")
        dim = _number("constraint", "dim", spec["dim"], int)
        scale = _number("constraint", "scale", spec.pop("scale", 1.0))
        power = _number("constraint", "power", spec.pop("power"))
        spec["axes"] = (scale * np.arange(1, dim + 1) ** power).tolist()
    elif "scale" in spec:
        raise ConfigError("constraint.scale: only valid together with constraint.power")
    try:
        return ConstraintSet.from_dict(spec)
    except (GeometryError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"constraint: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        if path.suffix == ".json":
            with open(path) as fh:
                data = json.load(fh)
            raw = data["config"] if "config" in data else data
        else:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return parse_config(raw)


# ---------------------------------------------------------------------------
# building blocks


def build_detector(cfg: ExperimentConfig, N: Optional[int] = None, epsilon: Optional[float] = None,
                   profile: Optional[WidthProfile] = None) -> DetectConfig:
    K = _build_constraint(cfg.constraint)
    c = cfg.constants
    return DetectConfig(
        N=cfg.N if N is None else N, d=K.dim, sigma=cfg.sigma,
        epsilon=cfg.epsilon if epsilon is None else epsilon, alpha=cfg.alpha, constraint=K,
        width_profile=profile if profile is not None else compute_profile(cfg, K),
        c2=c.get("c2", DEFAULT_C2), c_theory=c.get("c_theory", DEFAULT_C_THEORY),
        c_pre=c.get("c_pre", 2.0), c_low=c.get("c_low", 2.0), c_high=c.get("c_high", 2.0),
        c_weight=c.get("c_weight", 2.0), c_reg=c.get("c_reg", DEFAULT_C_REG),
        eps_tol=cfg.solver.get("eps_tol", 1e-3), budget_scale=cfg.solver.get("budget_scale", 8.0))


def compute_profile(cfg: ExperimentConfig, K: Optional[ConstraintSet] = None) -> WidthProfile:
    K = K or _build_constraint(cfg.constraint)
    if "profile_path" in cfg.solver:
        prof = WidthProfile.load(cfg.solver["profile_path"])
        if prof.dim != K.dim:
            raise ConfigError("solver.profile_path: profile dimension does not match the constraint")
        return prof
    if cfg.solver.get("method", "ellipsoid") == "water_filling":
        if K.kind not in ("ball", "ellipsoid"):
            raise ConfigError("solver.method: water_filling needs a ball or ellipsoid constraint")
        return exact_profile_from_axes(K.axes)
    return width_profile(K, cfg.solver.get("eps_tol", 1e-3), cfg.solver.get("budget_scale", 8.0))


def mu_list(cfg: ExperimentConfig, det: DetectConfig) -> list:
    spec = cfg.mu
    d = det.d
    mode = spec.get("mode", "zero")
    if mode == "zero":
        return [np.zeros(d)]
    if mode == "vector":
        v = np.asarray(spec.get("vector", []), dtype=float)
        if v.shape != (d,):
            raise ConfigError(f"mu.vector: expected length {d}")
        return [v]
    direction = spec.get("direction")
    if direction is None:
        u = np.zeros(d)
        axes = det.constraint.axes if det.constraint.axes is not None else np.ones(d)
        u[int(np.argmax(axes))] = 1.0
    else:
        u = np.asarray(direction, dtype=float)
        if u.shape != (d,) or not np.linalg.norm(u) > 0:
            raise ConfigError(f"mu.direction: expected a nonzero vector of length {d}")
        u = u / np.linalg.norm(u)
    if "norms" in spec:
        norms = [float(x) for x in spec["norms"]]
    elif "boundary_multiples" in spec:
        base = detection_boundary(det)
        norms = [math.sqrt(float(m) * base) for m in spec["boundary_multiples"]]
    else:
        raise ConfigError("mu: radial mode needs norms or boundary_multiples")
    out = [r * u for r in norms]
    for v in out:
        if not contains(det.constraint, v, 1e-8):
            log.warning("mean with norm %.4g lies outside the constraint set", np.linalg.norm(v))
    return out


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def write_manifest(out: Path, cfg: ExperimentConfig, command: str, extra: Optional[dict] = None):
    manifest = {"command": command, "config": cfg.to_toml_dict(), "config_hash": cfg.config_hash(),
                "seed": cfg.seed, "version": __version__}
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get(THREADS_ENV, "1")))


def _resolve(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
    out = Path(args.out or cfg.out or "kwidth-out")
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _widths_rows(prof: WidthProfile):
    raw = prof.raw_widths if prof.raw_widths is not None else prof.widths
    return [{"k": k, "width": float(prof.widths[k]), "value": float(prof.values[k]),
             "raw_width": float(raw[k])} for k in range(prof.dim + 1)]


# ---------------------------------------------------------------------------
# verbs


def cmd_widths(args) -> int:
    cfg, out = _resolve(args)
    prof = compute_profile(cfg)
    write_csv(out / "widths.csv", WIDTHS_COLUMNS, _widths_rows(prof))
    prof.save(out / "profile.json")
    write_manifest(out, cfg, "widths")
    return 0


def run_experiment(config_path, out=None, seed=None, trials=None, threads=1) -> int:
    """Widths, per-trial outcomes and error rates for one config."""
    args = argparse.Namespace(config=config_path, out=out, seed=seed, trials=trials, threads=threads)
    return cmd_detect(args)


def cmd_detect(args) -> int:
    cfg, out = _resolve(args)
    t0 = time.perf_counter()
    det = build_detector(cfg)
    prof = det.profile()
    write_csv(out / "widths.csv", WIDTHS_COLUMNS, _widths_rows(prof))
    adv = AdversarySpec.from_dict(cfg.adversary)
    rows, records = estimate_error_rates(det, adv, mu_list(cfg, det), cfg.trials, cfg.seed,
                                         threads=_threads(args))
    write_csv(out / "outcomes.csv", OUTCOME_COLUMNS, [r.to_row() for r in records])
    write_csv(out / "rates.csv", RATE_COLUMNS, [r.to_row() for r in rows])
    plan = det.plan()
    write_manifest(out, cfg, "detect", {"chosen_k": plan.k, "k1": plan.k1, "k2": plan.k2,
                                        "detection_boundary": detection_boundary(det)})
    _write_timing(out, t0, rows)
    return 0


def _write_timing(out, t0, rows):
    timing = {"wall_seconds": time.perf_counter() - t0,
              "mean_trial_seconds": [{"mu_norm": r.mu_norm, "adversary": r.adversary,
                                      "seconds": r.mean_runtime} for r in rows]}
    with open(out / "timing.json", "w") as fh:
        json.dump(timing, fh, indent=1)


def cmd_sweep(args) -> int:
    cfg, out = _resolve(args)
    t0 = time.perf_counter()
    values = [float(v) for v in args.values]
    if values != sorted(values):
        raise ConfigError("--values: must be sorted")
    adv_base = dict(cfg.adversary)
    K = _build_constraint(cfg.constraint)
    profile = compute_profile(cfg, K)
    all_rows = []
    for i, value in enumerate(values):
        N, eps, mus = cfg.N, cfg.epsilon, None
        if args.axis == "N":
            N = int(value)
        elif args.axis == "epsilon":
            eps = value
        det = build_detector(cfg, N=N, epsilon=eps, profile=profile)
        if args.axis == "rho":
            # value is a multiple of the boundary on |mu|, i.e. |mu|^2 = value^2 * boundary
            mu = {k: v for k, v in cfg.mu.items() if k != "boundary_multiples"}
            mu.update(mode="radial", norms=[value * math.sqrt(detection_boundary(det))])
            mus = mu_list(ExperimentConfig(**{**cfg.__dict__, "mu": mu}), det)
        else:
            mus = mu_list(cfg, det)
        adv = AdversarySpec.from_dict({**adv_base, "epsilon": eps if args.axis == "epsilon"
                                       else adv_base.get("epsilon", eps)})
        rows, _ = estimate_error_rates(det, adv, mus, cfg.trials, cfg.seed, threads=_threads(args),
                                       group_offset=i * 1024)
        all_rows.extend({"axis": args.axis, "value": value, **r.to_row()} for r in rows)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, all_rows)
    write_manifest(out, cfg, "sweep", {"axis": args.axis, "values": values})
    _write_timing(out, t0, [])
    return 0


def cmd_calibrate(args) -> int:
    cfg, out = _resolve(args)
    det = build_detector(cfg)
    adv = AdversarySpec.from_dict(cfg.adversary)
    res = calibrate_constant(det, args.target, cfg.trials, cfg.seed, share=args.share,
                             data_fn=null_data_fn(det, adv))
    result = {"target": res.target, "constant": res.constant, "rate": res.rate, "share": res.share,
              "monotone": res.monotone, "evaluations": [list(e) for e in res.evaluations]}
    with open(out / "calibration.json", "w") as fh:
        json.dump(result, fh, indent=1)
    write_manifest(out, cfg, "calibrate", {"target": args.target})
    print(f"{res.target} = {res.constant:.6g} (null rate {res.rate:.4f}, target {res.share:.4f})")
    if not res.monotone:
        print("warning: non-monotone response; search aborted", file=sys.stderr)
        return 3
    return 0


def cmd_check_regularity(args) -> int:
    cfg, out = _resolve(args)
    det = build_detector(cfg)
    plan, params = det.plan(), det.regularity()
    adv = AdversarySpec.from_dict(cfg.adversary)
    mu = mu_list(cfg, det)[0]
    rows = []
    for t in range(cfg.trials):
        rng = trial_stream(cfg.seed, 0, t)
        clean = generate_clean(det.N, det.d, mu, det.sigma, rng)
        Y = contaminate(clean, adv, {"mu": mu, "sigma": det.sigma, "cfg": det}, rng)
        s = WeightedSample((Y / det.sigma) @ plan.projection, np.ones(det.N), plan.k, 1.0, plan.cov)
        res = run_filters(s, params)
        if isinstance(res, Rejected):
            rows.append({"trial": t, "status": f"rejected-{res.stage}"})
            continue
        rep = check_omega_regularity(res, params, args.subsets, cfg.seed + t,
                                     float(np.linalg.norm(plan.projection @ mu)) / det.sigma)
        rows.append({"trial": t, "status": "ok" if rep.ok else "violated",
                     "ratio_i": rep.worst_ratio[0], "ratio_ii": rep.worst_ratio[1],
                     "ratio_iii": rep.worst_ratio[2], "violations_i": rep.violations[0],
                     "violations_ii": rep.violations[1], "violations_iii": rep.violations[2]})
    write_csv(out / "regularity.csv", REGULARITY_COLUMNS, rows)
    write_manifest(out, cfg, "check-regularity", {"subsets": args.subsets})
    return 0


def cmd_tail_check(args) -> int:
    out = Path(args.out or "kwidth-out")
    out.mkdir(parents=True, exist_ok=True)
    lemmas = TAIL_LEMMAS if args.lemma == "all" else [args.lemma]
    rows, ok = [], True
    trials = args.trials or 2000
    seed = args.seed or 0
    for lemma in lemmas:
        rep = empirical_tail_check(lemma, {"d": args.d}, trials, seed)
        ok &= rep.passed
        rows.append({"lemma": lemma, "row": -1, "key": "fitted_constant", "value": rep.fitted_constant})
        rows.append({"lemma": lemma, "row": -1, "key": "passed", "value": int(rep.passed)})
        for i, r in enumerate(rep.rows):
            for key in sorted(r):
                rows.append({"lemma": lemma, "row": i, "key": key, "value": float(r[key])})
        print(f"{lemma}: {'pass' if rep.passed else 'FAIL'} (fitted constant {rep.fitted_constant:.4g})")
    write_csv(out / "tail.csv", TAIL_COLUMNS, rows)
    with open(out / "manifest.json", "w") as fh:
        json.dump({"command": "tail-check", "lemma": args.lemma, "d": args.d, "trials": trials,
                   "seed": seed, "version": __version__}, fh, indent=1, sort_keys=True)
    return 0 if ok else 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kwidth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="TOML config or a run manifest.json")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--trials", type=int, help="override the trial count")
        p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")

    common(sub.add_parser("widths", help="approximate width profile"))
    common(sub.add_parser("detect", help="Monte-Carlo error rates of the robust test"))
    p = sub.add_parser("sweep", help="error rates along one axis")
    common(p)
    p.add_argument("--axis", choices=("rho", "epsilon", "N"), required=True)
    p.add_argument("--values", nargs="+", required=True,
                   help="rho: multiples of the boundary on |mu|; epsilon or N: raw values")
    p = sub.add_parser("calibrate", help="calibrate one constant on null data")
    common(p)
    p.add_argument("--target", choices=CALIBRATION_TARGETS, default="c2")
    p.add_argument("--share", type=float, help="target null rejection rate (default alpha/4)")
    p = sub.add_parser("check-regularity", help="audit the filtered weights")
    common(p)
    p.add_argument("--subsets", type=int, default=500)
    p = sub.add_parser("tail-check", help="Monte-Carlo audit of the concentration bounds")
    common(p, config=False)
    p.add_argument("--lemma", choices=TAIL_LEMMAS + ("all",), default="all")
    p.add_argument("--d", type=int, default=50)
    return parser


VERBS = {"widths": cmd_widths, "detect": cmd_detect, "sweep": cmd_sweep, "calibrate": cmd_calibrate,
         "check-regularity": cmd_check_regularity, "tail-check": cmd_tail_check}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return VERBS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
