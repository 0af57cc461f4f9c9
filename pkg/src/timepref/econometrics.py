"""One-way fixed-effects OLS with CR1 cluster-robust covariance, and the named
regression specifications run on analysis exports.

Fixed effects are absorbed by within-group demeaning. The residual degrees of
freedom count the absorbed levels, so they match an explicit dummy-variable
regression, and R^2 is reported for that full dummy model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats
from scipy.linalg import solve_triangular


class RegressionError(Exception):
    pass


class RankDeficiency(RegressionError):
    pass


class SingularCluster(RegressionError):
    pass


@dataclass
class OLSFit:
    names: list[str]
    coef: np.ndarray
    vcov: np.ndarray
    r2: float
    adj_r2: float
    n_obs: int
    n_clusters: int
    df_resid: int
    resid_se: float
    n_fe: int = 0

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.vcov))

    @property
    def tstat(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.se

    @property
    def pvalue(self) -> np.ndarray:
        # reference distribution: t with G - 1 degrees of freedom
        return 2 * stats.t.sf(np.abs(self.tstat), max(self.n_clusters - 1, 1))

    def __getitem__(self, name: str) -> tuple[float, float]:
        j = self.names.index(name)
        return float(self.coef[j]), float(self.se[j])

    def stars(self, name: str) -> str:
        return significance_stars(float(self.pvalue[self.names.index(name)]))


def significance_stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def _codes(key) -> tuple[np.ndarray, int]:
    if isinstance(key, pd.DataFrame):
        key = pd.MultiIndex.from_frame(key)
    elif not isinstance(key, (pd.Series, pd.Index, np.ndarray)):
        key = np.asarray(key)
    codes, uniques = pd.factorize(key, sort=True)
    if (codes < 0).any():
        raise RegressionError("missing group key")
    return codes, len(uniques)


def demean(values: np.ndarray, codes: np.ndarray, n_groups: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    if values.ndim == 1:
        return values - (np.bincount(codes, values, n_groups) / counts)[codes]
    out = np.empty_like(values)
    for j in range(values.shape[1]):
        out[:, j] = values[:, j] - (np.bincount(codes, values[:, j], n_groups) / counts)[codes]
    return out


def ols_fe_cluster(y, X, fe_key=None, cluster_key=None, names: Sequence[str] | None = None) -> OLSFit:
    """OLS of ``y`` on ``X`` with optional absorbed one-way FE and CR1 clustered vcov.

    Without ``fe_key`` a constant is prepended (named "Constant"). Without
    ``cluster_key`` every row is its own cluster, which gives HC1.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    if len(y) != n or len(names) != p:
        raise ValueError("shape mismatch between y, X and names")

    if fe_key is None:
        X = np.column_stack([np.ones(n), X])
        names = ["Constant"] + names
        Xw, yw, n_fe = X, y, 0
    else:
        codes, n_fe = _codes(fe_key)
        Xw, yw = demean(X, codes, n_fe), demean(y, codes, n_fe)
    k = Xw.shape[1]
    df_resid = n - k - n_fe
    if df_resid <= 0:
        raise RankDeficiency(f"{n} observations cannot identify {k + n_fe} parameters")

    Q, R = np.linalg.qr(Xw)
    diag = np.abs(np.diag(R))
    scale = np.linalg.norm(Xw, axis=0)
    if np.any(diag <= 1e-10 * np.maximum(scale, 1e-300)):
        bad = [names[j] for j in np.flatnonzero(diag <= 1e-10 * np.maximum(scale, 1e-300))]
        raise RankDeficiency(f"regressors not identified: {bad}")
    coef = solve_triangular(R, Q.T @ yw)
    resid = yw - Xw @ coef
    Rinv = solve_triangular(R, np.eye(k))
    bread = Rinv @ Rinv.T  # (X'X)^-1 without forming X'X

    if cluster_key is None:
        ccodes, G = np.arange(n), n
    else:
        ccodes, G = _codes(cluster_key)
    if G < 2:
        raise SingularCluster("need at least two clusters")
    scores = Xw * resid[:, None]
    S = np.column_stack([np.bincount(ccodes, scores[:, j], G) for j in range(k)])
    meat = S.T @ S
    factor = G / (G - 1) * (n - 1) / df_resid
    vcov = factor * bread @ meat @ bread
    vcov = (vcov + vcov.T) / 2

    ssr = float(resid @ resid)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 0.0 if sst == 0 else 1.0 - ssr / sst
    adj = 0.0 if sst == 0 else 1.0 - (1.0 - r2) * (n - 1) / df_resid
    return OLSFit(names, coef, vcov, r2, adj, n, G, df_resid, float(np.sqrt(ssr / df_resid)), n_fe)


# -- named specifications ------------------------------------------------------------

CELL_KEY = ["language", "t1", "t2", "r2"]  # one experimental cell, in either design


@dataclass
class RegressionTable:
    title: str
    dependent: str
    term_labels: dict[str, str]
    columns: list[tuple[str, OLSFit]]
    fe_rows: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def fit(self, label: str) -> OLSFit:
        return dict(self.columns)[label]


def _cross(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[frame.t2 > frame.t1]


def _same(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[frame.t2 == frame.t1]


CLUSTER_NOTE = "Standard errors clustered at the experimental cell (language-delay-interest) level, CR1."
R2_NOTE = "R2 is computed for the full model with fixed-effect dummies included."


def spec_ftr_share(frame: pd.DataFrame) -> RegressionTable:
    """Share choosing the delayed reward on a strong-FTR dummy: no FE, delay FE, delay x interest FE."""
    df = _cross(frame)
    if df.empty:
        raise RegressionError("no cross-period rows")
    x, y, cl = df.ftr_strong.to_numpy(), df.y_later.to_numpy(), df[CELL_KEY]
    cols = [
        ("", ols_fe_cluster(y, x, None, cl, ["Strong FTR"])),
        ("Delay FE", ols_fe_cluster(y, x, df[["d"]], cl, ["Strong FTR"])),
        ("Delay-Interest FE", ols_fe_cluster(y, x, df[["d", "i"]], cl, ["Strong FTR"])),
    ]
    return RegressionTable(
        "Strong versus weak FTR: propensity to choose the larger, later option",
        "Choosing the delayed reward", {"Strong FTR": "Strong FTR", "Constant": "Constant"},
        cols, ["Delay FE", "Delay-Interest FE"], [CLUSTER_NOTE, R2_NOTE],
    )


def spec_proper_test(frame: pd.DataFrame, same_period: bool = False) -> RegressionTable:
    """Choice of the larger reward on (r2 - r1)/1000: no FE, language FE, language x delay FE.

    For same-period data the delay column is the common delivery month.
    """
    df = _same(frame) if same_period else _cross(frame)
    if df.empty:
        raise RegressionError("no rows for this design")
    x = (df.r2.to_numpy() - df.r1.to_numpy()) / 1000.0
    y, cl = df.y_later.to_numpy(), df[CELL_KEY]
    delay = df[["language", "t2"]] if same_period else df[["language", "d"]]
    term = "Difference in rewards (in 1000 tokens)"
    cols = [
        ("", ols_fe_cluster(y, x, None, cl, [term])),
        ("Language FE", ols_fe_cluster(y, x, df[["language"]], cl, [term])),
        ("Language-Delay FE", ols_fe_cluster(y, x, delay, cl, [term])),
    ]
    dep = "Choosing the larger reward" if same_period else "Choosing the delayed reward"
    title = "Same-period choices and the reward gap" if same_period else "Proper-choice test: later choice and the reward gap"
    return RegressionTable(title, dep, {term: term, "Constant": "Constant"}, cols,
                           ["Language FE", "Language-Delay FE"], [CLUSTER_NOTE, R2_NOTE])


def spec_topic_ftr(topic_frame: pd.DataFrame, topics: Sequence[str], labels: Sequence[str] | None = None) -> RegressionTable:
    """Per-topic normalized prevalence on a strong-FTR dummy with delay x interest FE."""
    labels = list(labels or topics)
    df = _cross(topic_frame)
    x, cl, fe = df.ftr_strong.to_numpy(), df[CELL_KEY], df[["d", "i"]]
    cols = [(lab, ols_fe_cluster(df[t].to_numpy(), x, fe, cl, ["Strong FTR"])) for t, lab in zip(topics, labels)]
    return RegressionTable(
        "Topic prevalence in strong versus weak FTR languages",
        "Prevalence of topic (normalized)", {"Strong FTR": "Strong FTR"}, cols, [],
        ["All regressions include delay-interest fixed effects.", CLUSTER_NOTE, R2_NOTE],
    )


def clustered_group_means(values, groups, clusters) -> pd.DataFrame:
    """Mean of ``values`` per group with CR1 cluster-robust 95% intervals.

    Equivalent to OLS on a full set of group dummies without a constant.
    """
    values = np.asarray(values, dtype=float)
    codes, uniques = pd.factorize(pd.Series(groups), sort=True)
    n, g = len(values), len(uniques)
    counts = np.bincount(codes, minlength=g).astype(float)
    means = np.bincount(codes, values, g) / counts
    resid = values - means[codes]
    ccodes, G = _codes(clusters)
    if G < 2:
        raise SingularCluster("need at least two clusters")
    # dummy regressors make the bread diagonal: 1 / group size
    S = np.zeros((G, g))
    np.add.at(S, (ccodes, codes), resid)
    meat = S.T @ S
    vcov = (G / (G - 1)) * ((n - 1) / (n - g)) * meat / np.outer(counts, counts)
    se = np.sqrt(np.diag(vcov))
    t = stats.t.ppf(0.975, max(G - 1, 1))
    return pd.DataFrame({"group": list(uniques), "mean": means, "se": se, "ci_lo": means - t * se, "ci_hi": means + t * se})


# -- rendering ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


def render_table(table: RegressionTable) -> str:
    labels = [lab for lab, _ in table.columns]
    heads = [f"({j + 1})" for j in range(len(labels))]
    fits = [f for _, f in table.columns]
    terms = []
    for f in fits:
        for name in f.names:
            if name not in terms:
                terms.append(name)
    terms.sort(key=lambda t: t == "Constant")

    rows: list[list[str]] = []
    for term in terms:
        coef_row = [table.term_labels.get(term, term)]
        se_row = [""]
        for f in fits:
            if term in f.names:
                c, s = f[term]
                coef_row.append(_fmt(c) + f.stars(term))
                se_row.append(f"({_fmt(s)})")
            else:
                coef_row += [""]
                se_row += [""]
        rows += [coef_row, se_row, [""] * (len(fits) + 1)]
    footer = []
    is_topic = not table.fe_rows
    if is_topic:
        footer.append(["Topic"] + labels)
    for fe in table.fe_rows:
        footer.append([fe] + ["X" if lab == fe else "" for lab in labels])
    footer.append(["Observations"] + [f"{f.n_obs:,}" for f in fits])
    footer.append(["R2"] + [_fmt(f.r2) for f in fits])
    footer.append(["Adjusted R2"] + [_fmt(f.adj_r2) for f in fits])
    footer.append(["Residual Std. Error"] + [f"{_fmt(f.resid_se)} (df = {f.df_resid})" for f in fits])
    footer.append(["Clusters"] + [str(f.n_clusters) for f in fits])

    all_rows = [["", *heads]] + rows + footer
    widths = [max(len(r[j]) for r in all_rows) for j in range(len(fits) + 1)]
    line = lambda r: "  ".join(c.ljust(widths[0]) if j == 0 else c.center(widths[j]) for j, c in enumerate(r)).rstrip()
    total = sum(widths) + 2 * len(fits)
    out = [table.title, "=" * total, f"Dependent variable: {table.dependent}".center(total).rstrip(), "-" * total, line(all_rows[0]), "-" * total]
    out += [line(r) for r in rows]
    out.append("-" * total)
    out += [line(r) for r in footer]
    out.append("=" * total)
    out.append("Note: *p<0.1; **p<0.05; ***p<0.01")
    out += table.notes
    return "\n".join(out) + "\n"


def table_to_frame(table: RegressionTable) -> pd.DataFrame:
    rows = []
    for j, (label, f) in enumerate(table.columns):
        for k, name in enumerate(f.names):
            rows.append({
                "column": j + 1, "variant": label, "term": name, "coef": f.coef[k], "se": f.se[k],
                "t": f.tstat[k], "p": f.pvalue[k], "stars": f.stars(name), "n_obs": f.n_obs,
                "r2": f.r2, "adj_r2": f.adj_r2, "df_resid": f.df_resid, "resid_se": f.resid_se,
                "n_clusters": f.n_clusters, "n_fe": f.n_fe,
            })
    return pd.DataFrame(rows)
