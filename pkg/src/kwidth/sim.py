"""Data generation, adversaries and Monte-Carlo error estimates.

Every trial draws from its own counter-based stream: a Philox generator keyed
by ``(master_seed, stream_id)``. Gaussians come from those uniforms through
the Box-Muller transform, so a trial replays bit-exactly from its key.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from statsmodels.stats.proportion import proportion_confint

from .detect import DetectConfig, TestOutcome, robust_test

STRATEGIES = ("none", "large_norm", "mean_shift", "collinear_cluster", "anti_filter", "replay")
TAIL_LEMMAS = ("hanson_wright", "op_norm_cov", "op_norm_gram", "weighted_cov")


# ---------------------------------------------------------------------------
# random streams


def stream(master_seed: int, stream_id: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``(master_seed, stream_id)``."""
    key = np.array([master_seed % 2 ** 64, stream_id % 2 ** 64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def trial_stream(master_seed: int, group: int, trial: int) -> np.random.Generator:
    return stream(master_seed, (group << 32) | trial)


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else stream(int(seed))


def gaussians(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normals from uniforms by Box-Muller."""
    shape = tuple(np.atleast_1d(shape))
    size = int(np.prod(shape))
    half = (size + 1) // 2
    u1 = rng.random(half)
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return z[:size].reshape(shape)


def _unit(rng, d):
    v = gaussians(rng, d)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# data and adversaries


def generate_clean(N: int, d: int, mu, sigma: float, seed) -> np.ndarray:
    """``N`` rows i.i.d. ``N(mu, sigma^2 I_d)``."""
    rng = _as_rng(seed)
    mu = np.zeros(d) if mu is None else np.asarray(mu, dtype=float)
    return mu + sigma * gaussians(rng, (N, d))


@dataclass(frozen=True)
class AdversarySpec:
    """A contamination strategy replacing ``floor(eps N)`` rows.

    ``scale`` means: row norm in units of ``sigma sqrt(d)`` (large_norm), shift
    in units of ``sigma`` (mean_shift). ``direction`` defaults to ``-mu/|mu|``
    for mean_shift (``e_1`` under the null) and to ``e_1`` for
    collinear_cluster. ``rows`` feeds replay; without it replay duplicates
    clean rows.
    """

    strategy: str = "none"
    epsilon: float = 0.0
    scale: float = 10.0
    direction: Optional[tuple] = None
    rows: Optional[tuple] = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown adversary strategy {self.strategy!r}")
        if not 0 <= self.epsilon < 0.5:
            raise ValueError("adversary epsilon must lie in [0, 1/2)")

    def count(self, N: int) -> int:
        if self.strategy == "none":
            return 0
        return min(int(math.floor(self.epsilon * N + 1e-12)), N)

    def to_dict(self) -> dict:
        out = {"strategy": self.strategy, "epsilon": self.epsilon, "scale": self.scale}
        if self.direction is not None:
            out["direction"] = list(self.direction)
        if self.rows is not None:
            out["rows"] = [list(r) for r in self.rows]
        return out

    @classmethod
    def from_dict(cls, spec: dict) -> "AdversarySpec":
        spec = dict(spec)
        extra = set(spec) - {"strategy", "epsilon", "scale", "direction", "rows"}
        if extra:
            raise ValueError(f"adversary: unknown key(s) {sorted(extra)}")
        if spec.get("direction") is not None:
            spec["direction"] = tuple(float(x) for x in spec["direction"])
        if spec.get("rows") is not None:
            spec["rows"] = tuple(tuple(float(x) for x in r) for r in spec["rows"])
        return cls(**spec)


@dataclass
class Contamination:
    data: np.ndarray
    indices: np.ndarray


def _direction(adv, d, mu):
    if adv.direction is not None:
        v = np.asarray(adv.direction, dtype=float)
        if v.shape != (d,):
            raise ValueError("adversary direction has the wrong length")
        return v / np.linalg.norm(v)
    if adv.strategy == "mean_shift" and mu is not None and np.linalg.norm(mu) > 0:
        return -np.asarray(mu, dtype=float) / np.linalg.norm(mu)
    e = np.zeros(d)
    e[0] = 1.0
    return e


def contaminate(clean, adv: AdversarySpec, info: Optional[dict] = None, seed=0,
                return_indices: bool = False):
    """Replace ``floor(eps N)`` rows of ``clean`` according to ``adv``.

    ``info`` is the adversary's knowledge: ``mu``, ``sigma`` and the detector
    ``cfg`` (used by anti_filter to aim at the final statistic).
    """
    clean = np.asarray(clean, dtype=float)
    N, d = clean.shape
    info = info or {}
    mu = info.get("mu")
    sigma = float(info.get("sigma", 1.0))
    rng = _as_rng(seed)
    m = adv.count(N)
    out = clean.copy()
    if m == 0:
        idx = np.zeros(0, dtype=int)
        return Contamination(out, idx) if return_indices else out

    if adv.strategy == "anti_filter":
        idx, rows = _anti_filter(clean, m, info, rng)
    else:
        idx = np.sort(rng.choice(N, size=m, replace=False))
        base_mu = np.zeros(d) if mu is None else np.asarray(mu, dtype=float)
        if adv.strategy == "large_norm":
            rows = np.stack([adv.scale * sigma * math.sqrt(d) * _unit(rng, d) for _ in range(m)])
        elif adv.strategy == "mean_shift":
            shift = adv.scale * sigma * _direction(adv, d, mu)
            rows = base_mu + sigma * gaussians(rng, (m, d)) + shift
        elif adv.strategy == "collinear_cluster":
            v = _direction(adv, d, mu)
            rows = np.tile(base_mu + sigma * math.sqrt(d + 2 * math.sqrt(d)) * v, (m, 1))
        else:  # replay
            if adv.rows is not None:
                src = np.asarray(adv.rows, dtype=float)
                rows = src[np.arange(m) % len(src)]
            else:
                others = np.setdiff1d(np.arange(N), idx)
                rows = clean[rng.choice(others, size=m, replace=len(others) < m)]
    out[idx] = rows
    return Contamination(out, idx) if return_indices else out


def _anti_filter(clean, m, info, rng):
    # Replace the rows pulling the projected sum down the most with fresh-looking
    # rows nudged along the projected clean sum, keeping the nudge's spectral
    # footprint under half the sample-filter threshold.
    cfg: Optional[DetectConfig] = info.get("cfg")
    sigma = float(info.get("sigma", 1.0))
    mu = info.get("mu")
    N, d = clean.shape
    base_mu = np.zeros(d) if mu is None else np.asarray(mu, dtype=float)
    if cfg is None:
        A, k, gamma1, gamma2 = np.eye(d), float(d), math.inf, 2.0 * math.sqrt(N * d)
    else:
        plan = cfg.plan()
        params = cfg.regularity()
        A, k = plan.projection, float(plan.k)
        gamma1 = params.gamma1(N, k)
        gamma2 = params.gamma2(N, k) if N > k else params.gamma3(N, k)
    Yp = (clean / sigma) @ A
    total = Yp.sum(axis=0)
    scores = Yp @ total
    idx = np.sort(np.argsort(scores, kind="stable")[:m])
    direction = A @ total
    nrm = np.linalg.norm(A @ direction)
    if nrm == 0:
        direction, nrm = np.eye(d)[0], max(np.linalg.norm(A[:, 0]), 1e-12)
    unit = direction / nrm  # unit length after projection
    s = math.sqrt(0.5 * gamma2 / m)
    rows = base_mu / sigma + gaussians(rng, (m, d)) + s * unit
    # stay inside the prefilter band
    for i in range(m):
        proj = A @ rows[i]
        excess = float(proj @ proj) - k
        if excess > 0.9 * gamma1:
            rows[i] = rows[i] * math.sqrt((k + 0.9 * gamma1) / float(proj @ proj))
    return idx, sigma * rows


# ---------------------------------------------------------------------------
# Monte-Carlo error rates


@dataclass
class TrialRecord:
    seed: int
    group: int
    trial: int
    mu_norm: float
    adversary: str
    outcome: TestOutcome
    runtime: float = 0.0

    def to_row(self) -> dict:
        row = {"seed": self.seed, "group": self.group, "trial": self.trial,
               "mu_norm": self.mu_norm, "adversary": self.adversary}
        row.update(self.outcome.to_row())
        return row


@dataclass
class RateRow:
    mu_norm: float
    adversary: str
    kind: str
    rate: float
    ci_lo: float
    ci_hi: float
    trials: int
    failures: int = 0
    mean_runtime: float = 0.0

    def to_row(self) -> dict:
        return {"mu_norm": self.mu_norm, "adversary": self.adversary, "kind": self.kind,
                "rate": self.rate, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi,
                "trials": self.trials, "failures": self.failures}


def run_trial(cfg: DetectConfig, adv: AdversarySpec, mu, seed: int, group: int, trial: int,
              test=robust_test) -> TrialRecord:
    rng = trial_stream(seed, group, trial)
    mu = np.zeros(cfg.d) if mu is None else np.asarray(mu, dtype=float)
    t0 = time.perf_counter()
    clean = generate_clean(cfg.N, cfg.d, mu, cfg.sigma, rng)
    Y = contaminate(clean, adv, {"mu": mu, "sigma": cfg.sigma, "cfg": cfg}, rng)
    outcome = test(Y, cfg)
    return TrialRecord(seed, group, trial, float(np.linalg.norm(mu)), adv.strategy, outcome,
                       time.perf_counter() - t0)


def wilson(successes: int, n: int) -> tuple[float, float]:
    lo, hi = proportion_confint(successes, n, alpha=0.05, method="wilson")
    return float(lo), float(hi)


def estimate_error_rates(cfg: DetectConfig, adv: AdversarySpec, mu_list: Sequence, trials: int,
                         seed: int, threads: int = 1, test=robust_test, group_offset: int = 0):
    """Type I rate at ``mu = 0`` and Type II rate at every other ``mu``.

    Returns ``(rate_rows, trial_records)``; trial ``t`` of the ``j``-th mean
    uses stream ``(seed, (group_offset + j) << 32 | t)``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    cfg.plan()  # build the projection once, before any worker starts
    rows, records = [], []
    for j, mu in enumerate(mu_list):
        mu = np.zeros(cfg.d) if mu is None else np.asarray(mu, dtype=float)
        group = group_offset + j

        def one(t, mu=mu, group=group):
            try:
                return run_trial(cfg, adv, mu, seed, group, t, test)
            except (RuntimeError, np.linalg.LinAlgError):
                return None

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                recs = list(pool.map(one, range(trials)))
        else:
            recs = [one(t) for t in range(trials)]
        ok = [r for r in recs if r is not None]
        failures = len(recs) - len(ok)
        null = float(np.linalg.norm(mu)) == 0.0
        errors = sum(r.outcome.rejected == null for r in ok)
        n = max(len(ok), 1)
        lo, hi = wilson(errors, n) if ok else (math.nan, math.nan)
        rows.append(RateRow(float(np.linalg.norm(mu)), adv.strategy, "type_I" if null else "type_II",
                            errors / n, lo, hi, len(ok), failures,
                            float(np.mean([r.runtime for r in ok])) if ok else math.nan))
        records.extend(ok)
    return rows, records


# ---------------------------------------------------------------------------
# concentration audits


@dataclass
class TailReport:
    lemma: str
    fitted_constant: float
    rows: list = field(default_factory=list)
    passed: bool = True
    note: str = ""


def trace_k_covariance(d: int, k: float) -> np.ndarray:
    """Diagonal covariance with eigenvalues in (0, 1] and trace ``k``."""
    if not 0 < k <= d:
        raise ValueError("need 0 < k <= d")
    i = np.arange(1, d + 1)
    lo, hi = 0.0, 1e6
    for _ in range(200):
        s = 0.5 * (lo + hi)
        if np.minimum(1.0, s / np.sqrt(i)).sum() < k:
            lo = s
        else:
            hi = s
    return np.diag(np.minimum(1.0, hi / np.sqrt(i)))


def _mc_tol(p: float, n: int) -> float:
    return 4.0 * math.sqrt(max(p * (1 - p), 1.0 / n) / n) + 1.0 / n


def empirical_tail_check(lemma: str, params: Optional[dict] = None, trials: int = 2000,
                         seed: int = 0) -> TailReport:
    """Monte-Carlo audit of a concentration bound.

    The unknown universal constant is fitted on the first half of the trials
    (largest ``1 - delta`` quantile of the ratio to the bound's shape across the
    parameter grid) and then checked on the second half: the hold-out
    exceedance rate must stay within ``2 delta`` plus Monte-Carlo error.
    Hanson-Wright with ``A = I`` is additionally compared to the exact
    chi-square tail.
    """
    if lemma not in TAIL_LEMMAS:
        raise ValueError(f"unknown lemma {lemma!r}")
    params = dict(params or {})
    if trials < 2 or trials > 10_000:
        raise ValueError("trials must lie in [2, 10000]")
    d = int(params.get("d", 50))
    if d > 200:
        raise ValueError("d must be <= 200")
    if lemma == "hanson_wright":
        return _hanson_wright(d, params, trials, seed)
    return _op_norm_audit(lemma, d, params, trials, seed)


def _hanson_wright(d, params, trials, seed):
    rng = stream(seed, 1)
    kind = params.get("matrix", "identity")
    if kind == "identity":
        A = np.eye(d)
    elif kind == "zero":
        A = np.zeros((d, d))
    else:
        G = gaussians(stream(seed, 2), (d, d))
        A = 0.5 * (G + G.T) / math.sqrt(d)
    fro, op = np.linalg.norm(A), (np.linalg.norm(A, 2) if np.any(A) else 0.0)
    X = gaussians(rng, (trials, d))
    dev = np.einsum("ij,jk,ik->i", X, A, X) - np.trace(A)
    report = TailReport("hanson_wright", math.nan)
    if fro == 0:
        report.rows.append({"t": 0.0, "empirical": float(np.max(np.abs(dev)))})
        report.passed = bool(np.all(dev == 0))
        report.note = "A = 0: deviation identically zero"
        return report

    half = trials // 2
    fit, hold = np.abs(dev[:half]), np.abs(dev[half:])
    ts = np.array(params.get("t_grid", [1.0, 1.5, 2.0, 3.0])) * math.sqrt(2.0) * fro
    shape = np.minimum(ts ** 2 / fro ** 2, ts / op)
    # largest c with 2 exp(-c shape) above every fitted empirical tail
    emp_fit = np.array([max(np.mean(fit >= t), 1.0 / half) for t in ts])
    c = float(np.min(-np.log(np.minimum(emp_fit / 2.0, 1.0)) / shape))
    report.fitted_constant = c
    for t, sh in zip(ts, shape):
        emp = float(np.mean(hold >= t))
        bound = 2.0 * math.exp(-c * sh)
        row = {"t": float(t), "empirical": emp, "bound": bound,
               "ok": emp <= min(bound, 1.0) + _mc_tol(bound, len(hold))}
        if kind == "identity":
            exact = float(stats.chi2.sf(d + t, d) + stats.chi2.cdf(d - t, d))
            row["exact"] = exact
            row["oracle_ok"] = abs(float(np.mean(np.abs(dev) >= t)) - exact) <= _mc_tol(exact, trials)
        report.rows.append(row)
    report.passed = all(r["ok"] and r.get("oracle_ok", True) for r in report.rows)
    return report


def _worst_weighted_cov(X, m, iters=20):
    # sup over 0 <= w <= 1, |w|_1 <= m of ||sum w_i x_i x_i'||: top-m rows along
    # the current top direction, alternated with the top eigenvector
    best = 0.0
    starts = [np.linalg.eigh(X.T @ X)[1][:, -1], X[int(np.argmax(np.einsum("ij,ij->i", X, X)))]]
    for v in starts:
        v = v / np.linalg.norm(v)
        for _ in range(iters):
            sel = np.argsort(-(X @ v) ** 2, kind="stable")[:m]
            evals, evecs = np.linalg.eigh(X[sel].T @ X[sel])
            v_new = evecs[:, -1]
            best = max(best, float(evals[-1]))
            if abs(abs(float(v_new @ v)) - 1.0) < 1e-12:
                break
            v = v_new
    return best


def _op_norm_audit(lemma, d, params, trials, seed):
    delta = float(params.get("delta", 0.05))
    Ld = math.log(1.0 / delta)
    grid = params.get("k_grid")
    if grid is None:
        grid = sorted({max(1, d // 4), max(1, d // 2), d})
    eps = float(params.get("epsilon", 0.05))
    cases = []
    for gi, k in enumerate(grid):
        Sigma = trace_k_covariance(d, k)
        root = np.sqrt(np.diag(Sigma))
        rng = stream(seed, 10 + gi)
        vals = np.empty(trials)
        if lemma == "op_norm_cov":
            n = int(params.get("n_factor", 4)) * k
            shape = math.sqrt(n * k) + math.sqrt(n * Ld) + Ld
            for t in range(trials):
                X = gaussians(rng, (n, d)) * root
                vals[t] = np.linalg.norm(X.T @ X - n * Sigma, 2)
        elif lemma == "op_norm_gram":
            n = max(1, int(params.get("n_frac", 0.5) * k))
            if n >= k:
                n = max(1, k - 1)
            shape = math.sqrt(n * k) + math.sqrt(k * Ld) + Ld
            for t in range(trials):
                X = gaussians(rng, (n, d)) * root
                vals[t] = np.linalg.norm(X @ X.T - k * np.eye(n), 2)
        else:
            n = int(params.get("n", 200))
            m = max(1, int(math.floor(eps * n)))
            shape = eps * n * math.log(1.0 / eps) + k + Ld
            for t in range(trials):
                X = gaussians(rng, (n, d)) * root
                vals[t] = _worst_weighted_cov(X, m)
        cases.append((k, n, shape, vals))

    half = trials // 2
    c = max(float(np.quantile(v[:half] / s, 1.0 - delta)) for _, _, s, v in cases)
    report = TailReport(lemma, c)
    level = delta if lemma == "weighted_cov" else 2 * delta
    for k, n, s, v in cases:
        emp = float(np.mean(v[half:] > c * s))
        ok = emp <= level + _mc_tol(level, trials - half)
        report.rows.append({"k": k, "n": n, "empirical": emp, "level": level,
                            "median_ratio": float(np.median(v / s)), "ok": ok})
    report.passed = all(r["ok"] for r in report.rows)
    return report


def null_data_fn(cfg: DetectConfig, adv: AdversarySpec):
    """Sampler ``rng -> contaminated null data`` for :func:`kwidth.detect.calibrate_constant`."""
    def draw(rng):
        clean = generate_clean(cfg.N, cfg.d, None, cfg.sigma, rng)
        return contaminate(clean, adv, {"sigma": cfg.sigma, "cfg": cfg}, rng)
    return draw


def reference_zoo(epsilon: float, shift: float = 3.0) -> list:
    """The five shipped adversaries at contamination ``epsilon``."""
    return [AdversarySpec("large_norm", epsilon), AdversarySpec("mean_shift", epsilon, scale=shift),
            AdversarySpec("collinear_cluster", epsilon), AdversarySpec("anti_filter", epsilon),
            AdversarySpec("replay", epsilon)]
