"""Calibration, scaling fits and threshold fits for the experiment tables."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import binomtest

from ..errors import ConfigurationError


def calibrate_c(pilot_counts, L: float, exponent: int, factor: float = 0.5) -> float:
    """``c = factor * median(pilot counts) / L**exponent``."""
    counts = np.asarray(pilot_counts, dtype=float)
    if not len(counts):
        raise ConfigurationError("calibration needs at least one pilot count")
    return float(factor * np.median(counts) / L ** exponent)


def zero_failure_bound(n: int, confidence: float = 0.95) -> float:
    """One-sided upper bound on a failure rate after ``n`` trials with no failure.

    Exact binomial bound ``1 - (1 - confidence)^(1/n)``, about ``3 / n`` at 95%.
    """
    return 1.0 - (1.0 - confidence) ** (1.0 / n)


def wilson(k: int, n: int, confidence: float = 0.95) -> tuple:
    ci = binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class CellStats:
    x: float
    trials: int
    successes: int
    mean_count: float
    median_count: float

    @property
    def failures(self) -> int:
        return self.trials - self.successes

    @property
    def freq(self) -> float:
        return self.successes / self.trials

    @property
    def failure_freq(self) -> float:
        return self.failures / self.trials

    @property
    def stderr(self) -> float:
        p = self.freq
        return math.sqrt(p * (1 - p) / self.trials)

    def as_dict(self) -> dict:
        out = {"x": self.x, "trials": self.trials, "successes": self.successes,
               "failures": self.failures, "success_freq": self.freq, "failure_freq": self.failure_freq,
               "stderr": self.stderr, "wilson95": list(wilson(self.successes, self.trials)),
               "mean_count": self.mean_count, "median_count": self.median_count}
        if self.failures == 0:
            out["failure_upper95"] = zero_failure_bound(self.trials)
        return out


def cell_stats(x, counts, success) -> CellStats:
    counts = np.asarray(counts, dtype=float)
    return CellStats(float(x), len(counts), int(np.sum(success)), float(np.mean(counts)),
                     float(np.median(counts)))


@dataclass
class ScalingFit:
    exponent: int
    used: list  # L values entering the least-squares fit
    slope: float | None = None
    intercept: float | None = None
    c_prime: float | None = None
    residuals: list = field(default_factory=list)
    skipped: str | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def fit_failure_decay(Ls, failures, trials, exponent: int) -> ScalingFit:
    """Least squares of ``log(failure frequency)`` on ``L**exponent``.

    Cells without failures do not enter; they are reported with one-sided
    bounds elsewhere.  The decay rate is ``c' = -slope``.
    """
    Ls = np.asarray(Ls, dtype=float)
    f = np.asarray(failures, dtype=float) / np.asarray(trials, dtype=float)
    use = f > 0
    fit = ScalingFit(exponent, Ls[use].tolist())
    if len(Ls) < 2:
        fit.skipped = "single L"
        return fit
    if use.sum() < 2:
        fit.skipped = "fewer than two cells with failures"
        return fit
    x = Ls[use] ** exponent
    y = np.log(f[use])
    slope, intercept = np.polyfit(x, y, 1)
    fit.slope, fit.intercept, fit.c_prime = float(slope), float(intercept), float(-slope)
    fit.residuals = (y - (slope * x + intercept)).tolist()
    return fit


def monotone_violations(x, successes, trials, nsig: float = 2.0) -> list:
    """Adjacent pairs where the frequency drops by more than ``nsig`` binomial sigmas."""
    out = []
    p = np.asarray(successes, float) / np.asarray(trials, float)
    n = np.asarray(trials, float)
    for i in range(len(p) - 1):
        sd = math.sqrt(p[i] * (1 - p[i]) / n[i] + p[i + 1] * (1 - p[i + 1]) / n[i + 1])
        if p[i + 1] < p[i] - nsig * sd or (sd == 0 and p[i + 1] < p[i]):
            out.append((float(x[i]), float(x[i + 1])))
    return out


@dataclass
class LogisticFit:
    x0: float  # 50% point
    scale: float
    converged: bool
    message: str = ""
    interval: tuple | None = None

    def as_dict(self) -> dict:
        return {"x50": self.x0, "scale": self.scale, "converged": self.converged, "message": self.message,
                "bootstrap95": list(self.interval) if self.interval else None}


def _nll(theta, x, k, n):
    x0, log_s = theta
    z = (x - x0) / math.exp(log_s)
    # log p = -log(1 + e^-z), log(1 - p) = -log(1 + e^z)
    return float(np.sum(k * np.logaddexp(0.0, -z) + (n - k) * np.logaddexp(0.0, z)))


def fit_logistic(x, successes, trials) -> LogisticFit:
    """Maximum-likelihood fit of ``p(x) = 1 / (1 + exp(-(x - x0) / s))``."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    p = k / n
    # start at the interpolated crossing of 1/2
    above = np.nonzero(p >= 0.5)[0]
    x_start = float(x[above[0]]) if len(above) else float(x[-1])
    span = float(x[-1] - x[0]) or 1.0
    start = np.array([x_start, math.log(span / 4)])
    bounds = [(x[0] - 10 * span, x[-1] + 10 * span), (math.log(span * 1e-4), math.log(span * 100))]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(_nll, start, args=(x, k, n), method="L-BFGS-B", bounds=bounds)
    return LogisticFit(float(res.x[0]), float(math.exp(res.x[1])), bool(res.success), str(res.message))


def bootstrap_logistic(x, outcomes, resamples: int, rng: np.random.Generator,
                       confidence: float = 0.95) -> tuple:
    """Percentile interval of the 50% point, resampling trials within each cell."""
    x = np.asarray(x, dtype=float)
    outcomes = [np.asarray(o, dtype=float) for o in outcomes]
    n = np.array([len(o) for o in outcomes], dtype=float)
    est = []
    for _ in range(resamples):
        k = np.array([rng.choice(o, size=len(o)).sum() for o in outcomes])
        fit = fit_logistic(x, k, n)
        if fit.converged:
            est.append(fit.x0)
    if not est:
        return (math.nan, math.nan)
    a = (1 - confidence) / 2
    lo, hi = np.quantile(est, [a, 1 - a])
    return float(lo), float(hi)


def logistic_curve(x, fit: LogisticFit):
    return expit((np.asarray(x, float) - fit.x0) / fit.scale)
