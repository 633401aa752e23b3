"""Ensemble statistics over coupled trajectories."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy import stats

from .dynamics import EPS_COUPLED, CoupledTrajectory
from .errors import EnsembleError, ShyCouplingError, WindowTooShortError

CONFIDENCE = 0.99


class MissingSeriesError(ShyCouplingError, ValueError):
    pass


@dataclass
class StatTest:
    name: str
    statistic: float
    p_value: float
    passed: bool
    detail: dict = field(default_factory=dict)


@dataclass
class EnsembleSummary:
    replicas: int
    epsilon: float | None = None
    horizons: np.ndarray = field(default_factory=lambda: np.zeros(0))
    coupled_fraction: np.ndarray = field(default_factory=lambda: np.zeros(0))
    quantiles: dict = field(default_factory=dict)
    tail_rate: float | None = None
    tail_r2: float | None = None
    checkpoints: list = field(default_factory=list)
    qv: dict = field(default_factory=dict)
    tests: list = field(default_factory=list)
    confidence: float = CONFIDENCE

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tests)

    def as_dict(self) -> dict:
        out = {
            "replicas": self.replicas,
            "epsilon": self.epsilon,
            "confidence": self.confidence,
            "coupled_fraction": {f"{h:.6g}": float(f) for h, f in zip(self.horizons, self.coupled_fraction)},
            "coupling_time_quantiles": {str(k): v for k, v in self.quantiles.items()},
            "tail_rate": self.tail_rate,
            "tail_r2": self.tail_r2,
        }
        if self.qv:
            out["quadratic_variation"] = dict(self.qv)
        if self.checkpoints:
            out["checkpoints"] = list(self.checkpoints)
        out["tests"] = [
            {"name": t.name, "statistic": t.statistic, "p_value": t.p_value, "passed": t.passed, **t.detail}
            for t in self.tests
        ]
        return out

    def to_text(self) -> str:
        return yaml.safe_dump(_plain(self.as_dict()), sort_keys=False)

    def checkpoint_csv(self) -> str:
        cols = ["t", "replicas", "mean_stopped_time", "ci_low", "ci_high", "log_mean_gap",
                "increment_mean", "increment_se", "increment_p", "significant"]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for row in self.checkpoints:
            buf.write(",".join(_cell(row.get(c)) for c in cols) + "\n")
        return buf.getvalue()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ----------------------------------------------------------------- ensembles


def check_ensemble(trajs) -> None:
    """All replicas must share h, epsilon, strategy, starting pair and master seed."""
    if not trajs:
        return
    ref = trajs[0]
    seen = set()
    for tr in trajs:
        if tr.replica in seen:
            raise EnsembleError(f"replica {tr.replica} appears twice")
        seen.add(tr.replica)
        same = (
            tr.h == ref.h
            and tr.epsilon == ref.epsilon
            and tr.strategy == ref.strategy
            and tr.seed == ref.seed
            and np.array_equal(tr.X[0], ref.X[0])
            and np.array_equal(tr.Y[0], ref.Y[0])
        )
        if not same:
            raise EnsembleError(f"replica {tr.replica} was run with a different configuration")


def event_times(trajs):
    """(times, observed): coupling time or censoring time for each replica."""
    t = np.array([tr.coupling_time if tr.coupling_time is not None else tr.t[-1] for tr in trajs], dtype=float)
    obs = np.array([tr.coupling_time is not None for tr in trajs])
    return t, obs


def kaplan_meier(times, observed):
    """Step survival estimate: (distinct event times, survival just after each)."""
    times = np.asarray(times, dtype=float)
    observed = np.asarray(observed, dtype=bool)
    order = np.lexsort((~observed, times))
    times, observed = times[order], observed[order]
    uniq = np.unique(times[observed])
    surv = np.empty(len(uniq))
    s = 1.0
    for k, u in enumerate(uniq):
        at_risk = np.count_nonzero(times >= u)
        d = np.count_nonzero((times == u) & observed)
        s *= 1.0 - d / at_risk
        surv[k] = s
    return uniq, surv


def survival_at(uniq, surv, t):
    idx = np.searchsorted(uniq, np.asarray(t, dtype=float), side="right") - 1
    return np.where(idx >= 0, surv[np.maximum(idx, 0)], 1.0)


def exponential_tail_fit(uniq, surv, n, start_level=0.5, min_events=10, points=50):
    """Least-squares fit of log survival against time over the tail.

    The tail runs from where survival first drops to ``start_level`` to the
    last event time at which at least ``min_events`` replicas remain.
    Returns (rate, r2), or (None, None) when the tail is too short.
    """
    if len(uniq) < 3:
        return None, None
    lo_idx = np.searchsorted(-surv, -start_level)
    floor = max(min_events / n, 1e-12)
    hi_candidates = np.nonzero(surv >= floor)[0]
    if lo_idx >= len(uniq) or not len(hi_candidates):
        return None, None
    t0, t1 = uniq[lo_idx], uniq[hi_candidates[-1]]
    if not t1 > t0:
        return None, None
    grid = np.linspace(t0, t1, points)
    y = np.log(survival_at(uniq, surv, grid))
    slope, intercept, r, _, _ = stats.linregress(grid, y)
    return float(-slope), float(r * r)


def coupling_time_stats(trajs, epsilon=None, horizons=None, quantile_levels=(0.1, 0.25, 0.5, 0.75, 0.9)) -> EnsembleSummary:
    """Empirical distribution of the epsilon-coupling time with censoring at the horizon."""
    trajs = list(trajs)
    check_ensemble(trajs)
    if not trajs:
        return EnsembleSummary(replicas=0, epsilon=epsilon)
    eps = trajs[0].epsilon if epsilon is None else float(epsilon)
    if eps != trajs[0].epsilon:
        raise EnsembleError(f"ensemble was stopped at epsilon={trajs[0].epsilon}, not {eps}")
    n = len(trajs)
    t, obs = event_times(trajs)
    uniq, surv = kaplan_meier(t, obs)
    if horizons is None:
        horizons = np.linspace(0.0, float(t.max()), 11)
    horizons = np.asarray(horizons, dtype=float)
    frac = np.array([np.count_nonzero(obs & (t <= hz)) / n for hz in horizons])
    quant = {}
    for q in quantile_levels:
        below = np.nonzero(1.0 - surv >= q)[0]
        quant[q] = float(uniq[below[0]]) if len(below) else None
    rate, r2 = exponential_tail_fit(uniq, surv, n)
    return EnsembleSummary(
        replicas=n,
        epsilon=eps,
        horizons=horizons,
        coupled_fraction=frac,
        quantiles=quant,
        tail_rate=rate,
        tail_r2=r2,
    )


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n) if n > 0 else math.inf


# ---------------------------------------------------------- supermartingale


def _row_at(tr: CoupledTrajectory, t: float) -> int:
    """Last recorded row with time <= t (the frozen state after stopping)."""
    return int(np.searchsorted(tr.t, t + 0.5 * tr.h, side="right") - 1)


def supermartingale_test(trajs, cert, checkpoints, confidence: float = CONFIDENCE) -> EnsembleSummary:
    """Test that Z_t = Psi(X_{t^S}, Y_{t^S}) + t^S has no positive mean increment.

    With W = c - Psi = exp(log_c - lambda Phi) the increment over
    [t_j, t_k] is W_j (1 - exp(-lambda dPhi)) + d(t^S). Dividing by the
    positive F_{t_j}-measurable scale W_j + (t_k - t_j) keeps the sign of its
    conditional mean and leaves a quantity of order one; a one-sided z-test
    at the given confidence then flags a significant increase. Every
    trajectory must carry its Phi series.
    """
    trajs = list(trajs)
    check_ensemble(trajs)
    cps = np.asarray(checkpoints, dtype=float)
    if len(cps) < 2 or np.any(np.diff(cps) <= 0):
        raise ValueError("need at least two increasing checkpoints")
    if not trajs:
        return EnsembleSummary(replicas=0, confidence=confidence)
    for tr in trajs:
        if tr.phi is None:
            raise MissingSeriesError(f"replica {tr.replica} has no certificate series")
        if cps[-1] > tr.t[-1] + 0.5 * tr.h and tr.stop_reason != EPS_COUPLED:
            raise ValueError("checkpoint beyond the simulated horizon")
    n = len(trajs)
    m = len(cps)
    log_w = np.empty((n, m))
    tau = np.empty((n, m))
    for r, tr in enumerate(trajs):
        rows = [_row_at(tr, c) for c in cps]
        phi = np.asarray(tr.phi, dtype=float)[rows]
        log_w[r] = cert.log_c - cert.lam * phi
        stop = tr.coupling_time if tr.coupling_time is not None else math.inf
        tau[r] = np.minimum(cps, stop)
    z = stats.norm.ppf(confidence)
    rows_out, tests = [], []
    for j in range(m):
        mt = float(tau[:, j].mean())
        se_t = float(tau[:, j].std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        row = {
            "t": float(cps[j]),
            "replicas": n,
            "mean_stopped_time": mt,
            "ci_low": mt - z * se_t,
            "ci_high": mt + z * se_t,
            "log_mean_gap": float(np.logaddexp.reduce(log_w[:, j]) - math.log(n)),
        }
        if j > 0:
            dt = float(cps[j] - cps[j - 1])
            zeta = normalized_increments(log_w[:, j - 1], log_w[:, j], tau[:, j] - tau[:, j - 1], dt)
            mean, se, p, sig = one_sided_increase(zeta, z)
            row.update(increment_mean=mean, increment_se=se, increment_p=p, significant=sig)
            tests.append(StatTest(f"increment[{cps[j - 1]:.6g},{cps[j]:.6g}]", mean, p, not sig, {"se": se}))
        rows_out.append(row)
    return EnsembleSummary(replicas=n, epsilon=cert.epsilon, checkpoints=rows_out, tests=tests, confidence=confidence)


def normalized_increments(log_w0, log_w1, dtau, dt):
    """(Z_1 - Z_0) / (W_0 + dt) for each replica, computed without forming W."""
    log_w0 = np.asarray(log_w0, dtype=float)
    r = 1.0 / (1.0 + np.exp(-(log_w0 - math.log(dt))))
    with np.errstate(over="ignore"):
        psi_part = -np.expm1(np.asarray(log_w1, dtype=float) - log_w0)
    return r * psi_part + (1.0 - r) * np.asarray(dtau, dtype=float) / dt


def one_sided_increase(sample, z):
    """(mean, standard error, p-value, significant) for H0: mean <= 0."""
    sample = np.asarray(sample, dtype=float)
    n = len(sample)
    with np.errstate(invalid="ignore", over="ignore"):
        mean = float(np.mean(sample))
        se = float(np.std(sample, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    if not math.isfinite(mean):
        # a -inf mean means at least one replica's Psi fell by more than the scale
        return mean, se, 1.0 if mean < 0 else 0.0, bool(mean > 0)
    if se == 0:
        return mean, se, 0.0 if mean > 0 else 1.0, bool(mean > 0)
    p = float(stats.norm.sf(mean / se))
    return mean, se, p, bool(mean - z * se > 0)


def log_expected_time_bound(cert, x0, y0) -> float:
    """log Psi(x0, y0), which bounds E[S] from above."""
    from .certificates.functions import eval_Phi

    phi, _ = eval_Phi(cert, x0, y0)
    return cert.log_c + math.log(-math.expm1(-cert.lam * phi))


# ----------------------------------------------------- quadratic variation


def quadratic_variation(series, h: float, window: float) -> np.ndarray:
    """Rolling sum of squared increments over ``window`` time units, per unit time."""
    series = np.asarray(series, dtype=float)
    k = int(round(window / h))
    if k < 2:
        raise WindowTooShortError(f"window {window} spans {k} steps of size {h}")
    if len(series) < k + 1:
        raise WindowTooShortError(f"series has {len(series) - 1} increments, window needs {k}")
    sq = np.diff(series) ** 2
    cs = np.concatenate([[0.0], np.cumsum(sq)])
    return (cs[k:] - cs[:-k]) / (k * h)


# -------------------------------------------------------------- marginals


def marginal_sample(trajs, t: float, which: str = "X", coord: int = 0) -> np.ndarray:
    out = []
    for tr in trajs:
        row = _row_at(tr, t)
        if tr.t[row] + 0.5 * tr.h < t:
            raise ValueError(f"replica {tr.replica} stopped before t={t}")
        out.append(getattr(tr, which)[row, coord])
    return np.array(out)


def marginal_ks_test(trajs_a, trajs_b, t: float, coord: int = 0, which: str = "X", confidence: float = CONFIDENCE) -> StatTest:
    """Two-sample KS test that one particle has the same law at time t in both ensembles."""
    a = marginal_sample(trajs_a, t, which, coord)
    b = marginal_sample(trajs_b, t, which, coord)
    res = stats.ks_2samp(a, b)
    return StatTest(f"ks_{which}{coord + 1}@{t:.6g}", float(res.statistic), float(res.pvalue), bool(res.pvalue > 1 - confidence))


def mean_ci(values, confidence: float = CONFIDENCE):
    values = np.asarray(values, dtype=float)
    m = float(values.mean())
    if len(values) < 2:
        return m, m, m
    half = stats.norm.ppf(0.5 + confidence / 2) * values.std(ddof=1) / math.sqrt(len(values))
    return m, m - half, m + half
