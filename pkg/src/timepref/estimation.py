"""Maximum-likelihood estimation of the exponentially discounted Luce model.

P(sooner) = EU_s^(1/mu) / (EU_s^(1/mu) + EU_l^(1/mu)) with EU = r / (1 + delta)^(t/12).
Observations are aggregated into (option pair -> n, k_sooner) bins before the
likelihood is evaluated, which is exact and keeps each evaluation O(#cells).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.special import expit

from .design import RewardOption

P_CLAMP = 1e-12
DEFAULT_STARTS = tuple(itertools.product((0.1, 0.5, 1.0, 2.0), (0.1, 0.5)))
Z95 = 1.959963984540054


class EstimationError(Exception):
    pass


class DegenerateDataError(EstimationError):
    """All choices identical: the likelihood increases towards a boundary."""

    def __init__(self, diagnosis: str):
        super().__init__(diagnosis)
        self.diagnosis = diagnosis


class NonConvergence(EstimationError):
    pass


@dataclass(frozen=True)
class ChoiceObservation:
    sooner: RewardOption
    later: RewardOption
    y_sooner: bool

    def __post_init__(self):
        if not self.later.amount > self.sooner.amount:
            raise ValueError("the later option must pay more")
        if not self.later.delivery_months > self.sooner.delivery_months:
            raise ValueError("the later option must arrive later")


@dataclass(frozen=True)
class ChoiceData:
    """Binned choices: one entry per distinct option pair."""

    r1: np.ndarray
    t1: np.ndarray
    r2: np.ndarray
    t2: np.ndarray
    n: np.ndarray
    k_sooner: np.ndarray

    @property
    def n_obs(self) -> int:
        return int(self.n.sum())

    @property
    def n_sooner(self) -> int:
        return int(self.k_sooner.sum())

    @classmethod
    def from_arrays(cls, r1, t1, r2, t2, y_sooner) -> "ChoiceData":
        frame = pd.DataFrame({"r1": r1, "t1": t1, "r2": r2, "t2": t2, "y": np.asarray(y_sooner, dtype=int)})
        if frame.empty:
            raise EstimationError("no observations")
        if (frame.r2 <= frame.r1).any() or (frame.t2 <= frame.t1).any():
            raise ValueError("every observation needs a larger, strictly later option")
        g = frame.groupby(["r1", "t1", "r2", "t2"], sort=True)["y"].agg(["size", "sum"]).reset_index()
        return cls(
            g.r1.to_numpy(float), g.t1.to_numpy(float), g.r2.to_numpy(float), g.t2.to_numpy(float),
            g["size"].to_numpy(float), g["sum"].to_numpy(float),
        )

    @classmethod
    def from_observations(cls, obs: Iterable[ChoiceObservation]) -> "ChoiceData":
        obs = list(obs)
        return cls.from_arrays(
            [o.sooner.amount for o in obs], [o.sooner.delivery_months for o in obs],
            [o.later.amount for o in obs], [o.later.delivery_months for o in obs],
            [o.y_sooner for o in obs],
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ChoiceData":
        """From analysis rows (columns r1, t1, r2, t2, y_later); same-period rows are skipped."""
        cross = frame[frame.t2 > frame.t1]
        return cls.from_arrays(cross.r1, cross.t1, cross.r2, cross.t2, 1 - cross.y_later.to_numpy())


def _as_data(data) -> ChoiceData:
    if isinstance(data, ChoiceData):
        return data
    if isinstance(data, pd.DataFrame):
        return ChoiceData.from_frame(data)
    return ChoiceData.from_observations(data)


def _utility_gap(delta, mu, d: ChoiceData) -> np.ndarray:
    # (ln EU_s - ln EU_l) / mu
    ln_s = np.log(d.r1) - d.t1 / 12.0 * math.log1p(delta)
    ln_l = np.log(d.r2) - d.t2 / 12.0 * math.log1p(delta)
    return (ln_s - ln_l) / mu


def log_likelihood(delta: float, mu: float, data) -> float:
    if not (delta > 0 and mu > 0):
        raise ValueError("delta and mu must be positive")
    d = _as_data(data)
    z = _utility_gap(delta, mu, d)
    p = np.clip(expit(z), P_CLAMP, 1 - P_CLAMP)
    q = np.clip(expit(-z), P_CLAMP, 1 - P_CLAMP)
    ll = float(np.sum(d.k_sooner * np.log(p) + (d.n - d.k_sooner) * np.log(q)))
    if not math.isfinite(ll):
        raise EstimationError("non-finite log-likelihood")
    return ll


def score(delta: float, mu: float, data) -> np.ndarray:
    """Analytic gradient of the clamped log-likelihood in (delta, mu)."""
    d = _as_data(data)
    z = _utility_gap(delta, mu, d)
    p, q = expit(z), expit(-z)
    live_p = (p > P_CLAMP) & (p < 1 - P_CLAMP)
    live_q = (q > P_CLAMP) & (q < 1 - P_CLAMP)
    # d/dz ln p = q and d/dz ln q = -p, zero where the clamp is active
    resid = d.k_sooner * q * live_p - (d.n - d.k_sooner) * p * live_q
    dz_ddelta = (d.t2 - d.t1) / 12.0 / (1.0 + delta) / mu
    dz_dmu = -z / mu
    return np.array([np.sum(resid * dz_ddelta), np.sum(resid * dz_dmu)])


def numerical_gradient(f, x, rel_step: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        h = rel_step * max(abs(x[i]), 1e-3)
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def numerical_hessian(f, x, rel_step: float = 1e-4) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = len(x)
    h = rel_step * np.maximum(np.abs(x), 1e-2)
    H = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4 * h[i] * h[j])
    return H


@dataclass
class MLEFit:
    delta_hat: float
    mu_hat: float
    se_delta: float
    se_mu: float
    loglik: float
    n_obs: int
    converged: bool
    n_evals: int
    grad_max: float = float("nan")
    cov: np.ndarray = field(default=None, repr=False)

    @property
    def ci95_delta(self) -> tuple[float, float]:
        return (self.delta_hat - Z95 * self.se_delta, self.delta_hat + Z95 * self.se_delta)

    @property
    def ci95_mu(self) -> tuple[float, float]:
        return (self.mu_hat - Z95 * self.se_mu, self.mu_hat + Z95 * self.se_mu)


def fit_mle(data, init: tuple[float, float] | None = None, xatol: float = 1e-8, maxfev: int = 10_000) -> MLEFit:
    """Multi-start Nelder-Mead in (log delta, log mu), then Newton polishing and Hessian SEs."""
    d = _as_data(data)
    if d.n_sooner == 0:
        raise DegenerateDataError("all choices are the later option: likelihood rises as delta -> 0 and mu -> 0")
    if d.n_sooner == d.n_obs:
        raise DegenerateDataError("all choices are the sooner option: likelihood rises as delta -> infinity")

    scale = 1.0 / d.n_obs

    def negll(theta):
        if np.any(np.abs(theta) > 30):
            return np.inf
        return -log_likelihood(math.exp(theta[0]), math.exp(theta[1]), d) * scale

    starts = [init] if init is not None else DEFAULT_STARTS
    best = None
    evals = 0
    any_converged = False
    for delta0, mu0 in starts:
        res = minimize(negll, np.log([delta0, mu0]), method="Nelder-Mead",
                       options={"xatol": xatol, "fatol": 1e-14, "maxfev": maxfev})
        evals += res.nfev
        any_converged |= bool(res.success)
        if best is None or res.fun < best.fun:
            best = res
    if not any_converged:
        raise NonConvergence(f"no start converged within {maxfev} evaluations")

    x = _newton_polish(d, np.exp(best.x))
    delta_hat, mu_hat = float(x[0]), float(x[1])
    ll_fn = lambda v: log_likelihood(v[0], v[1], d)
    grad = numerical_gradient(ll_fn, x)

    # Hessian in the optimisation coordinates, mapped back with the delta method
    ll_log = lambda th: log_likelihood(math.exp(th[0]), math.exp(th[1]), d)
    H = numerical_hessian(ll_log, np.log(x))
    try:
        cov_log = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        cov_log = np.full((2, 2), np.nan)
    J = np.diag(x)
    cov = J @ cov_log @ J
    se = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    return MLEFit(delta_hat, mu_hat, float(se[0]), float(se[1]), ll_fn(x), d.n_obs,
                  bool(best.success), evals, float(np.max(np.abs(grad))), cov)


def _newton_polish(d: ChoiceData, x: np.ndarray, steps: int = 8) -> np.ndarray:
    """A few safeguarded Newton steps on the score; stops when it no longer helps."""
    ll = lambda v: log_likelihood(v[0], v[1], d)
    current = ll(x)
    for _ in range(steps):
        g = score(x[0], x[1], d)
        if np.max(np.abs(g)) < 1e-9:
            break
        H = numerical_hessian(ll, x)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        cand = x - step
        if np.any(cand <= 0):
            break
        val = ll(cand)
        if val < current - 1e-9 * abs(current):
            break
        x, current = cand, val
    return x


GROUPINGS = ("language", "ftr")


@dataclass
class GroupFit:
    group: str
    ftr_class: str
    fit: MLEFit | None
    error: str | None = None


def fit_by_group(frame: pd.DataFrame, grouping: str = "ftr") -> list[GroupFit]:
    """Independent fits per language or per FTR pool, strong-FTR groups first.

    Within a pool both delta and mu are shared.
    """
    if grouping not in GROUPINGS:
        raise ValueError(f"grouping must be one of {GROUPINGS}")
    frame = frame[frame.t2 > frame.t1]
    if grouping == "ftr":
        keys = [("strong", frame.ftr_strong == 1, "strong"), ("weak", frame.ftr_strong == 0, "weak")]
    else:
        langs = frame[["language", "ftr_strong"]].drop_duplicates()
        # stable: strong first, then by first appearance (registry order in exports)
        order = sorted(range(len(langs)), key=lambda j: (-int(langs.ftr_strong.iloc[j]), j))
        keys = [
            (langs.language.iloc[j], frame.language == langs.language.iloc[j],
             "strong" if langs.ftr_strong.iloc[j] else "weak")
            for j in order
        ]
    out = []
    for name, mask, cls in keys:
        sub = frame[mask]
        try:
            out.append(GroupFit(name, cls, fit_mle(ChoiceData.from_frame(sub))))
        except EstimationError as exc:
            out.append(GroupFit(name, cls, None, str(exc)))
    return out


FIT_COLUMNS = ["group", "ftr_class", "delta", "se", "ci_lo", "ci_hi", "mu", "se_mu", "loglik", "n", "error"]


def fits_table(fits: Sequence[GroupFit]) -> pd.DataFrame:
    rows = []
    for g in fits:
        if g.fit is None:
            rows.append({"group": g.group, "ftr_class": g.ftr_class, "error": g.error})
            continue
        f = g.fit
        lo, hi = f.ci95_delta
        rows.append({
            "group": g.group, "ftr_class": g.ftr_class, "delta": f.delta_hat, "se": f.se_delta,
            "ci_lo": lo, "ci_hi": hi, "mu": f.mu_hat, "se_mu": f.se_mu, "loglik": f.loglik,
            "n": f.n_obs, "error": "",
        })
    return pd.DataFrame(rows, columns=FIT_COLUMNS)


def plot_data(fits: Sequence[GroupFit]) -> pd.DataFrame:
    """Point-range data for the per-group delta chart."""
    t = fits_table(fits)
    t = t[t.error == ""]
    return t.rename(columns={"delta": "estimate"})[["group", "estimate", "ci_lo", "ci_hi", "ftr_class"]].reset_index(drop=True)
