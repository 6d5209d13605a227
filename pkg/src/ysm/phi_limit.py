"""The limit occurrence law phi and its tail.

phi(ell) is estimated two ways:

* from the string model, averaging nu_n(ell) / (n p) over replicates;
* from the branching process: phi is the law of B(tau * eps) where eps is
  standard exponential and tau = p_bar (1 + alpha), independent of B.

tau is the algebraic simplification of alpha / b, which stays finite at
alpha = 0 where b = 0.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats
from scipy.special import betaln, gamma

from . import csbp
from .rng import make_rng
from .simon_model import ModelParams, grow_string

POWER, CRITICAL, EXPONENTIAL = "power", "critical", "exponential"


@dataclass(frozen=True)
class RegimeParams:
    p: float
    alpha: float
    p_bar: float
    b: float
    tau_scale: float
    regime: str
    tail_exponent: float | None
    rate: float | None
    rho: float


def derive_regime(p: float, alpha: float) -> RegimeParams:
    """Constants of the (p, alpha) model; the regime test is done in exact
    rational arithmetic on the given floats, so it flips exactly at
    p_bar = alpha / (1 + alpha)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if not alpha >= 0.0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    p_bar = 1.0 - p
    tau = p_bar * (1.0 + alpha)
    b = alpha / tau
    gap = (1 - Fraction(p)) * (1 + Fraction(alpha)) - Fraction(alpha)
    if gap > 0:
        regime = POWER
    elif gap < 0:
        regime = EXPONENTIAL
    else:
        regime = CRITICAL
    exponent = 1.0 / float(gap) if regime == POWER else None
    rate = math.log(b) + 1.0 / b - 1.0 if regime == EXPONENTIAL else None
    return RegimeParams(p, alpha, p_bar, b, tau, regime, exponent, rate, 1.0 / p_bar)


def yule_simon_pmf(rho: float, ell):
    """rho * B(ell, rho + 1)."""
    if rho <= 0 or np.any(np.asarray(ell) < 1):
        raise ValueError("need rho > 0 and ell >= 1")
    out = rho * np.exp(betaln(np.asarray(ell, dtype=float), rho + 1.0))
    return float(out) if np.ndim(out) == 0 else out


def _clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    a = 1.0 - level
    lo = 0.0 if k == 0 else stats.beta.ppf(a / 2, k, n - k + 1)
    hi = 1.0 if k == n else stats.beta.ppf(1 - a / 2, k + 1, n - k)
    return float(lo), float(hi)


@dataclass
class PhiEstimate:
    """Estimated pmf with per-ell standard errors.

    ``counts``/``trials`` are the pooled binomial counts behind the
    estimates; ``scale`` converts a count fraction into the estimate's
    normalization (1 for the branching route, distinct words / (n p) pooled
    for the model route).
    """

    pmf: dict[int, tuple[float, float]]
    n_samples: int
    method: str
    counts: dict[int, int]
    trials: int
    scale: float = 1.0
    truncated: int = 0
    samples: np.ndarray | None = field(default=None, repr=False)

    def est(self, ell: int) -> float:
        return self.pmf.get(ell, (0.0, 0.0))[0]

    def se(self, ell: int) -> float:
        if ell in self.pmf:
            return self.pmf[ell][1]
        return 0.0

    def vector(self, ell_max: int) -> tuple[np.ndarray, np.ndarray]:
        est = np.array([self.est(ell) for ell in range(1, ell_max + 1)])
        se = np.array([self.se(ell) for ell in range(1, ell_max + 1)])
        return est, se

    def interval(self, ell: int, level: float = 0.95) -> tuple[float, float]:
        """Normal interval, or Clopper-Pearson when fewer than 30 counts."""
        k = self.counts.get(ell, 0)
        if k < 30:
            lo, hi = _clopper_pearson(k, self.trials, level)
            return lo * self.scale, hi * self.scale
        z = stats.norm.ppf(0.5 + level / 2)
        e, s = self.est(ell), self.se(ell)
        return max(0.0, e - z * s), e + z * s


def estimate_phi_csbp(regime: RegimeParams, n_samples: int, rng: np.random.Generator,
                      event_cap: int = csbp.DEFAULT_EVENT_CAP) -> PhiEstimate:
    """Empirical law of B(tau * eps) over ``n_samples`` independent paths."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    horizons = regime.tau_scale * rng.standard_exponential(n_samples)
    batch = csbp.sample_at_horizons(regime.b, horizons, rng, event_cap)
    counts = np.bincount(batch.births)
    pmf, cnt = {}, {}
    for ell in np.flatnonzero(counts):
        q = counts[ell] / n_samples
        pmf[int(ell)] = (float(q), math.sqrt(q * (1 - q) / n_samples))
        cnt[int(ell)] = int(counts[ell])
    return PhiEstimate(pmf, n_samples, "csbp", cnt, n_samples, 1.0, batch.n_truncated, batch.births)


def _replicate_nu(params: ModelParams, r: int) -> np.ndarray:
    words = grow_string(params.n, params.p, params.alpha, make_rng(params.seed, r))
    return np.bincount(np.bincount(words))


def estimate_phi_model(params: ModelParams, replicates: int, threads: int = 1) -> PhiEstimate:
    """Average of nu_n(ell) / (n p) over replicates 0..replicates-1.

    Standard errors are the across-replicate standard deviation over
    sqrt(replicates); with a single replicate a Poisson approximation
    sqrt(nu) / (n p) is used instead.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        nus = list(pool.map(lambda r: _replicate_nu(params, r), range(replicates)))
    top = max(len(v) for v in nus)
    mat = np.zeros((replicates, top), dtype=np.int64)
    for i, v in enumerate(nus):
        mat[i, : len(v)] = v
    mat[:, 0] = 0
    norm = params.n * params.p
    mean = mat.mean(axis=0) / norm
    if replicates > 1:
        se = mat.std(axis=0, ddof=1) / math.sqrt(replicates) / norm
    else:
        se = np.sqrt(mat[0]) / norm
    pooled = mat.sum(axis=0)
    trials = int(pooled.sum())
    pmf = {int(ell): (float(mean[ell]), float(se[ell])) for ell in np.flatnonzero(pooled)}
    counts = {int(ell): int(pooled[ell]) for ell in np.flatnonzero(pooled)}
    return PhiEstimate(pmf, replicates, "model", counts, trials, trials / (replicates * norm))


def total_variation(est: dict[int, float] | np.ndarray, exact) -> float:
    """TV distance between an empirical pmf on 1..L and an exact pmf.

    ``exact(ells)`` must accept an array; mass of the exact law beyond the
    largest index considered is added in full.
    """
    if isinstance(est, dict):
        top = max(est)
        vec = np.zeros(top)
        for ell, v in est.items():
            vec[ell - 1] = v
    else:
        vec = np.asarray(est, dtype=float)
    top = max(len(vec), 1000)
    ref = exact(np.arange(1, top + 1))
    full = np.zeros(top)
    full[: len(vec)] = vec
    tail = max(0.0, 1.0 - float(ref.sum()))
    return 0.5 * (float(np.abs(full - ref).sum()) + tail)


class InsufficientTailError(ValueError):
    pass


@dataclass
class TailFit:
    regime: str
    fitted_value: float
    stderr: float
    fit_range: tuple[int, int]
    r_squared: float
    n_tail: int
    hill: float | None = None
    hill_stderr: float | None = None
    hill_k: int | None = None
    points: np.ndarray | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "regime": self.regime,
            "fitted_value": self.fitted_value,
            "stderr": self.stderr,
            "fit_range": list(self.fit_range),
            "r_squared": self.r_squared,
            "n_tail": self.n_tail,
            "hill": self.hill,
            "hill_stderr": self.hill_stderr,
            "hill_k": self.hill_k,
        }


def ccdf_points(samples) -> np.ndarray:
    """(k, P(X > k)) at every distinct sample value k with P(X > k) > 0."""
    x = np.asarray(samples)
    vals, cnt = np.unique(x, return_counts=True)
    beyond = x.size - np.cumsum(cnt)
    keep = beyond > 0
    return np.column_stack([vals[keep], beyond[keep] / x.size])


def hill_estimator(samples, fraction: float = 0.05) -> tuple[float, float, int]:
    """Hill estimate of the CCDF exponent from the top ``fraction`` order statistics."""
    x = np.sort(np.asarray(samples, dtype=float))[::-1]
    k = int(fraction * x.size)
    if k < 1 or x[k] <= 0:
        raise InsufficientTailError("not enough order statistics for the Hill estimator")
    h = float(np.mean(np.log(x[:k])) - math.log(x[k]))
    if h <= 0:
        raise InsufficientTailError("degenerate top order statistics")
    return 1.0 / h, 1.0 / (h * math.sqrt(k)), k


def fit_power_tail(samples, k_min: float | None = None, k_max: float | None = None,
                   quantile: float = 0.9, min_tail: int = 100, hill_fraction: float = 0.05) -> TailFit:
    """Least-squares slope of log P(X > k) against log k.

    The range defaults to k_min = the ``quantile`` sample quantile and k_max =
    the largest k that still has ``min_tail`` samples beyond it.  Every
    distinct sample value inside the range is one regression point.  A
    Hill estimate over the top ``hill_fraction`` is attached as a
    cross-check.
    """
    x = np.asarray(samples)
    if k_min is None:
        k_min = float(np.quantile(x, quantile))
    n_tail = int(np.count_nonzero(x > k_min))
    if n_tail < min_tail:
        raise InsufficientTailError(f"only {n_tail} samples beyond k_min = {k_min}")
    pts = ccdf_points(x)
    if k_max is None:
        ok = pts[:, 1] * x.size >= min_tail
        k_max = float(pts[ok, 0].max())
    sel = (pts[:, 0] >= k_min) & (pts[:, 0] <= k_max)
    if np.count_nonzero(sel) < 3:
        raise InsufficientTailError("fewer than three CCDF points in the fit range")
    lx, ly = np.log(pts[sel, 0]), np.log(pts[sel, 1])
    res = stats.linregress(lx, ly)
    try:
        hill, hill_se, hill_k = hill_estimator(x, hill_fraction)
    except InsufficientTailError:
        hill = hill_se = hill_k = None
    return TailFit(POWER, float(-res.slope), float(res.stderr), (int(k_min), int(k_max)),
                   float(res.rvalue**2), n_tail, hill, hill_se, hill_k, pts[sel])


def check_exponential_tail(phi: PhiEstimate, regime: RegimeParams, delta: float = 0.05):
    """(sum_ell e^{c ell} phi(ell), bound b, statistic <= b (1 + delta))."""
    if regime.regime != EXPONENTIAL:
        raise ValueError("exponential-tail check needs the exponential regime")
    c = regime.rate
    stat = math.fsum(math.exp(c * ell) * est for ell, (est, _) in phi.pmf.items())
    return stat, regime.b, stat <= regime.b * (1.0 + delta)


@dataclass
class ConstantEstimate:
    estimate: float
    stderr: float
    horizon: float
    n_paths: int
    n_continued: int
    half_horizon_estimate: float
    closed_form: float | None

    def to_json(self) -> dict:
        return dict(self.__dict__)


def constant_C(regime: RegimeParams, n_paths: int, rng: np.random.Generator,
               horizon: float | None = None, switch_level: float = 100.0) -> ConstantEstimate:
    """Monte Carlo mean of (W_T / (1 - b))**tail_exponent.

    T defaults to 20 / (1 - b).  The estimate at T / 2 from an independent
    batch is reported as a horizon-sensitivity check; at alpha = 0 the
    closed form Gamma(1 + 1/p_bar) is attached.
    """
    if regime.regime != POWER:
        raise ValueError("the constant C is defined in the power regime only")
    T = 20.0 / (1.0 - regime.b) if horizon is None else horizon
    g = regime.tail_exponent
    ms = csbp.sample_martingale(regime.b, T, n_paths, rng, switch_level)
    vals = (ms.w / (1.0 - regime.b)) ** g
    half = csbp.sample_martingale(regime.b, T / 2, n_paths, rng, switch_level)
    half_est = float(np.mean((half.w / (1.0 - regime.b)) ** g))
    closed = float(gamma(1.0 + 1.0 / regime.p_bar)) if regime.alpha == 0 else None
    return ConstantEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths)), T,
                            n_paths, ms.n_continued, half_est, closed)


def phi_report(regime: RegimeParams, phi: PhiEstimate, ell_max: int | None = None,
               tailfit: TailFit | None = None, C: ConstantEstimate | None = None) -> dict:
    ells = sorted(phi.pmf) if ell_max is None else range(1, ell_max + 1)
    return {
        "params": {"p": regime.p, "alpha": regime.alpha},
        "regime": {k: v for k, v in regime.__dict__.items()},
        "method": phi.method,
        "n_samples": phi.n_samples,
        "truncated": phi.truncated,
        "phi": [{"ell": int(ell), "est": phi.est(ell), "se": phi.se(ell)} for ell in ells],
        "tailfit": None if tailfit is None else tailfit.to_json(),
        "C": None if C is None else C.to_json(),
    }


def write_ccdf_csv(samples, path, meta: dict) -> None:
    pts = ccdf_points(samples)
    with open(path, "w", newline="") as f:
        f.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["k", "ccdf"])
        for k, c in pts:
            writer.writerow([int(k), repr(float(c))])
