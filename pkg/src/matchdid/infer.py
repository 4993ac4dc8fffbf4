"""Outcome estimation: random-intercept linear probability model fitted by
REML, the four-cell contrast algebra, and Rubin's rules for pooling over
imputed data sets.

The REML criterion is profiled over the variance ratio theta =
sigma0^2/sigma1^2; for a random intercept the per-cluster inverse
(I + theta J)^-1 = I - theta/(1 + theta n_i) J collapses everything to
cluster totals, so each profile evaluation costs O(C p^2).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar
from scipy.stats import t as t_dist

from ._util import fmt
from .errors import ConvergenceError, DataValidationError
from .model import BirthRecord, ModelSpec, PrevalenceLevel, Quadruple
from .classify import prevalence_level

# Fixed-effect order of the outcome model: intercept, the three design
# indicators, then the covariate regressors.
INDICATOR_REGRESSORS: Tuple[str, ...] = (
    "low_prevalence", "late_period", "treated_pair",
)
COVARIATE_REGRESSORS: Tuple[str, ...] = (
    "mother_age", "mother_age_sq", "birth_order", "birth_order_sq",
    "wealth_index", "urban", "mother_education", "child_is_boy",
    "married", "antenatal",
)
REGRESSORS: Tuple[str, ...] = ("intercept",) + INDICATOR_REGRESSORS + COVARIATE_REGRESSORS

RESULTS_COLUMNS = ["regressor", "estimate", "ci_low", "ci_high", "p_value"]
DIAGNOSTICS_COLUMNS = ["regressor", "between_var", "within_var", "var_ratio"]


def covariate_row(r: BirthRecord) -> List[float]:
    age = float(r.mother_age_years)
    order = float(r.birth_order_code)
    return [
        age, age * age, order, order * order, float(r.wealth_index),
        float(r.urban), float(r.mother_education), float(r.child_is_boy),
        float(r.married), float(r.antenatal),
    ]


# ---------------------------------------------------------------------------
# design construction


@dataclass(frozen=True)
class InferenceDesign:
    """Everything fixed across imputation replicates: the design matrix,
    cluster coding, cell masks, and the observed outcome.

    ``regressors`` names the columns of X; covariate columns that are
    constant over the kept records (e.g. birth order under a first-born
    filter) are pruned and listed in ``dropped_regressors``.
    """

    records: Tuple[BirthRecord, ...]
    X: np.ndarray
    cluster_codes: np.ndarray
    cluster_ids: Tuple[str, ...]
    observed_lbw: np.ndarray            # nan where missing
    cell_masks: Mapping[str, np.ndarray]  # hl_early, hl_late, hh_early, hh_late
    n_dropped: int
    regressors: Tuple[str, ...] = REGRESSORS
    dropped_regressors: Tuple[str, ...] = ()

    @property
    def n_records(self) -> int:
        return len(self.records)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_ids)

    def covariate_names(self) -> Tuple[str, ...]:
        return tuple(n for n in self.regressors if n in COVARIATE_REGRESSORS)


def build_design(
    records: Sequence[BirthRecord],
    quadruples: Sequence[Quadruple],
    spec: ModelSpec = ModelSpec(),
) -> InferenceDesign:
    """Keep the births inside matched clusters and assemble Eq-style rows:
    intercept, low-prevalence / late-period / treated-pair indicators, and
    the covariate regressors."""
    if not quadruples:
        raise DataValidationError("no quadruples to build a design from")
    flags: Dict[str, Tuple[int, int, int]] = {}
    for q in quadruples:
        for cluster, treated in ((q.treated.early, 1), (q.treated.late, 1),
                                 (q.control.early, 0), (q.control.late, 0)):
            low = int(prevalence_level(
                cluster.pfpr_at(cluster.prevalence_year), spec
            ) is PrevalenceLevel.LOW)
            late = int(cluster.role.value == "late")
            flags[cluster.cluster_id] = (low, late, treated)

    kept = [r for r in records if r.cluster_id in flags]
    if not kept:
        raise DataValidationError("no birth records fall inside matched clusters")
    cluster_ids = tuple(sorted({r.cluster_id for r in kept}))
    code_of = {cid: i for i, cid in enumerate(cluster_ids)}

    rows, codes, observed = [], [], []
    masks = {name: [] for name in ("hl_early", "hl_late", "hh_early", "hh_late")}
    for r in kept:
        low, late, treated = flags[r.cluster_id]
        rows.append([1.0, float(low), float(late), float(treated)]
                    + covariate_row(r))
        codes.append(code_of[r.cluster_id])
        observed.append(float("nan") if r.lbw is None else float(r.lbw))
        masks["hl_early"].append(treated == 1 and late == 0)
        masks["hl_late"].append(treated == 1 and late == 1)
        masks["hh_early"].append(treated == 0 and late == 0)
        masks["hh_late"].append(treated == 0 and late == 1)

    X = np.array(rows, dtype=float)
    # covariates made constant by a row filter are aliased with the
    # intercept; drop them instead of failing every replicate fit
    keep_cols, dropped = [], []
    for j, name in enumerate(REGRESSORS):
        if name in COVARIATE_REGRESSORS and X[:, j].min() == X[:, j].max():
            dropped.append(name)
        else:
            keep_cols.append(j)
    return InferenceDesign(
        records=tuple(kept),
        X=X[:, keep_cols],
        cluster_codes=np.array(codes, dtype=np.int64),
        cluster_ids=cluster_ids,
        observed_lbw=np.array(observed, dtype=float),
        cell_masks={k: np.array(v, dtype=bool) for k, v in masks.items()},
        n_dropped=len(records) - len(kept),
        regressors=tuple(REGRESSORS[j] for j in keep_cols),
        dropped_regressors=tuple(dropped),
    )


# ---------------------------------------------------------------------------
# REML random-intercept fit


@dataclass(frozen=True)
class MixedFit:
    estimates: Dict[str, float]
    standard_errors: Dict[str, float]
    sigma0_sq: float
    sigma1_sq: float
    loglik: float
    converged: bool
    theta: float

    def estimate_vector(self, names: Sequence[str]) -> np.ndarray:
        return np.array([self.estimates[n] for n in names])


class MixedModelData:
    """Per-cluster sufficient statistics reused across replicate fits."""

    def __init__(self, X: np.ndarray, cluster_codes: np.ndarray,
                 names: Sequence[str] = REGRESSORS):
        X = np.asarray(X, dtype=float)
        cluster_codes = np.asarray(cluster_codes)
        if X.ndim != 2 or len(X) != len(cluster_codes):
            raise DataValidationError("design and cluster codes misaligned")
        if len(np.unique(cluster_codes)) < 2:
            raise DataValidationError("need at least 2 clusters")
        if len(names) != X.shape[1]:
            raise DataValidationError("regressor names do not match design width")
        self.names = tuple(names)
        order = np.argsort(cluster_codes, kind="stable")
        self.order = order
        self.X = X[order]
        codes = cluster_codes[order]
        self.n, self.p = X.shape
        self._check_rank()
        starts = np.concatenate([[0], np.flatnonzero(np.diff(codes)) + 1])
        self.starts = starts
        self.cluster_sizes = np.diff(np.concatenate([starts, [self.n]]))
        self.xtx = self.X.T @ self.X
        self.cluster_x_totals = np.add.reduceat(self.X, starts, axis=0)

    def _check_rank(self):
        rank = np.linalg.matrix_rank(self.X)
        if rank < self.p:
            # pivoted QR puts the dependent columns last
            _, _, piv = scipy.linalg.qr(self.X, mode="economic", pivoting=True)
            bad = sorted(piv[rank:].tolist())
            cols = ", ".join(self.names[j] for j in bad)
            raise DataValidationError(f"design matrix is rank deficient; "
                                      f"collinear columns: {cols}")

    def _suff(self, y: np.ndarray):
        y = np.asarray(y, dtype=float)[self.order]
        xty = self.X.T @ y
        yty = float(y @ y)
        ty = np.add.reduceat(y, self.starts)
        return xty, yty, ty

    def _gls_parts(self, theta: float, xty, yty, ty):
        c = theta / (1.0 + theta * self.cluster_sizes)
        tx = self.cluster_x_totals
        xwx = self.xtx - (tx * c[:, None]).T @ tx
        xwy = xty - tx.T @ (c * ty)
        ywy = yty - float(c @ (ty * ty))
        return xwx, xwy, ywy

    def profile_criterion(self, theta: float, xty, yty, ty) -> Tuple[float, ...]:
        """Returns (criterion, rss, gamma, xwx); criterion is -2 REML
        log-likelihood up to an additive constant."""
        xwx, xwy, ywy = self._gls_parts(theta, xty, yty, ty)
        try:
            chol = np.linalg.cholesky(xwx)
        except np.linalg.LinAlgError:
            return (math.inf, math.inf, np.zeros(self.p), xwx)
        gamma = scipy.linalg.cho_solve((chol, True), xwy)
        rss = max(ywy - float(xwy @ gamma), 0.0)
        logdet_xwx = 2.0 * float(np.log(np.diag(chol)).sum())
        logdet_v = float(np.log1p(theta * self.cluster_sizes).sum())
        if rss <= 0.0:
            return (-math.inf, 0.0, gamma, xwx)
        crit = (self.n - self.p) * math.log(rss) + logdet_v + logdet_xwx
        return (crit, rss, gamma, xwx)

    def reml_loglik(self, y: np.ndarray, sigma0_sq: float, sigma1_sq: float) -> float:
        """Full REML log-likelihood at arbitrary variance components."""
        if sigma1_sq <= 0:
            return -math.inf
        xty, yty, ty = self._suff(y)
        theta = sigma0_sq / sigma1_sq
        xwx, xwy, ywy = self._gls_parts(theta, xty, yty, ty)
        chol = np.linalg.cholesky(xwx)
        gamma = scipy.linalg.cho_solve((chol, True), xwy)
        rss = max(ywy - float(xwy @ gamma), 0.0)
        logdet_xwx = 2.0 * float(np.log(np.diag(chol)).sum())
        logdet_v = float(np.log1p(theta * self.cluster_sizes).sum())
        n, p = self.n, self.p
        return -0.5 * ((n - p) * math.log(2.0 * math.pi * sigma1_sq)
                       + logdet_v + logdet_xwx + rss / sigma1_sq)

    def fit(self, y: np.ndarray) -> MixedFit:
        xty, yty, ty = self._suff(y)

        def crit(log_theta: float) -> float:
            return self.profile_criterion(math.exp(log_theta), xty, yty, ty)[0]

        crit0, rss0, gamma0, _ = self.profile_criterion(0.0, xty, yty, ty)
        if rss0 <= 1e-12 * max(1.0, yty):
            # degenerate outcome: zero residual variation at theta = 0
            estimates = dict(zip(self.names, gamma0))
            zeros = dict(zip(self.names, np.zeros(self.p)))
            return MixedFit(estimates=estimates, standard_errors=zeros,
                            sigma0_sq=0.0, sigma1_sq=0.0, loglik=math.inf,
                            converged=True, theta=0.0)

        grid = np.linspace(-14.0, 10.0, 49)
        values = [crit(u) for u in grid]
        u_best = float(grid[int(np.argmin(values))])
        res = minimize_scalar(
            crit, bounds=(u_best - 1.5, u_best + 1.5), method="bounded",
            options={"xatol": 1e-10},
        )
        best_u = float(res.x)
        best_crit = float(res.fun)
        theta = math.exp(best_u)
        if crit0 <= best_crit:
            theta = 0.0
        criterion, rss, gamma, xwx = self.profile_criterion(theta, xty, yty, ty)
        if not math.isfinite(criterion):
            raise ConvergenceError("REML profile criterion is not finite")
        sigma1_sq = rss / (self.n - self.p)
        sigma0_sq = theta * sigma1_sq
        cov = sigma1_sq * np.linalg.inv(xwx)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
        loglik = self.reml_loglik(y, sigma0_sq, sigma1_sq)
        return MixedFit(
            estimates=dict(zip(self.names, gamma)),
            standard_errors=dict(zip(self.names, se)),
            sigma0_sq=sigma0_sq, sigma1_sq=sigma1_sq,
            loglik=loglik, converged=True, theta=theta,
        )


def fit_mixed_lpm(
    X: np.ndarray,
    cluster_codes: np.ndarray,
    y: np.ndarray,
    names: Sequence[str] = REGRESSORS,
) -> MixedFit:
    """One-shot REML fit of the random-intercept linear probability model."""
    return MixedModelData(X, cluster_codes, names).fit(y)


# ---------------------------------------------------------------------------
# contrast algebra


def did_contrasts(a: float, b: float, c: float, d: float) -> Tuple[float, float, float]:
    """(k1, k2, k3) from the four cell means: a = treated early, b =
    treated late, c = control early, d = control late."""
    k2 = d - c
    k1 = (b - a) - (d - c)
    k3 = a - c
    return k1, k2, k3


# ---------------------------------------------------------------------------
# Rubin's rules


@dataclass(frozen=True)
class PooledEstimate:
    estimate: float
    between_var: float
    within_var: float
    total_var: float
    df: float                      # inf when between_var is 0
    ci_low: float
    ci_high: float
    p_value: float

    @property
    def var_ratio(self) -> float:
        if self.within_var == 0.0:
            return 0.0 if self.between_var == 0.0 else math.inf
        return self.between_var / self.within_var


def _pool_one(estimates: np.ndarray, variances: np.ndarray) -> PooledEstimate:
    m = len(estimates)
    gamma_bar = float(estimates.mean())
    b = float(estimates.var(ddof=1))
    v_bar = float(variances.mean())
    t_total = (1.0 + 1.0 / m) * b + v_bar
    if b == 0.0:
        df = math.inf
    else:
        df = (m - 1) * (1.0 + v_bar / ((1.0 + 1.0 / m) * b)) ** 2
    if t_total == 0.0:
        half = 0.0
        p_value = 1.0 if gamma_bar == 0.0 else 0.0
    else:
        half = float(t_dist.ppf(0.975, df)) * math.sqrt(t_total)
        stat = abs(gamma_bar) / math.sqrt(t_total)
        p_value = float(2.0 * t_dist.sf(stat, df))
    return PooledEstimate(
        estimate=gamma_bar, between_var=b, within_var=v_bar,
        total_var=t_total, df=df,
        ci_low=gamma_bar - half, ci_high=gamma_bar + half, p_value=p_value,
    )


def rubin_combine(
    estimates: np.ndarray,
    variances: np.ndarray,
    names: Optional[Sequence[str]] = None,
) -> Dict[str, PooledEstimate]:
    """Pool per-replicate estimates and squared standard errors.

    ``estimates`` and ``variances`` are (M,) or (M, p) arrays; M >= 2.
    The total variance is (1 + 1/M) B + Vbar and the t degrees of freedom
    are (M - 1) [1 + Vbar / ((1 + 1/M) B)]^2, degenerating to normal
    quantiles when B = 0.
    """
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    variances = np.atleast_2d(np.asarray(variances, dtype=float))
    if estimates.shape[0] == 1 and estimates.shape[1] > 1 and names is None:
        estimates = estimates.T
        variances = variances.T
    if estimates.shape[0] < 2:
        raise DataValidationError("Rubin pooling needs M >= 2 replicates")
    if estimates.shape != variances.shape:
        raise DataValidationError("estimates and variances misaligned")
    if names is None:
        names = [f"g{j}" for j in range(estimates.shape[1])]
    return {
        name: _pool_one(estimates[:, j], variances[:, j])
        for j, name in enumerate(names)
    }


# ---------------------------------------------------------------------------
# the pooled primary analysis


@dataclass(frozen=True)
class PrimaryResult:
    pooled: Dict[str, PooledEstimate]
    naive_k1: float
    naive_k2: float
    naive_k3: float
    covariate_drift: float
    m: int
    n_records: int
    n_clusters: int
    sigma0_sq_mean: float
    sigma1_sq_mean: float


def _cell_rate(observed: np.ndarray, mask: np.ndarray) -> float:
    values = observed[mask]
    values = values[~np.isnan(values)]
    if len(values) == 0:
        return math.nan
    return float(values.mean())


def replicate_fits(
    data: MixedModelData,
    imputed_lbw: Sequence[np.ndarray],
    threads: int = 1,
) -> List[MixedFit]:
    """Fit the outcome model once per completed data set; the collection
    order is by replicate index regardless of scheduling."""
    if threads <= 1 or len(imputed_lbw) <= 1:
        return [data.fit(y.astype(float)) for y in imputed_lbw]
    results: List[Optional[MixedFit]] = [None] * len(imputed_lbw)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {
            pool.submit(data.fit, y.astype(float)): i
            for i, y in enumerate(imputed_lbw)
        }
        for future in futures:
            results[futures[future]] = future.result()
    return results  # type: ignore[return-value]


def run_primary_analysis(
    design: InferenceDesign,
    imputed_sets,
    threads: int = 1,
) -> PrimaryResult:
    """Fit the outcome model on every completed data set, pool by Rubin's
    rules, and report the naive four-cell contrast and the covariate drift
    term over treated pairs for comparison."""
    if len(imputed_sets) < 2:
        raise DataValidationError("primary analysis needs M >= 2 imputations")
    names = design.regressors
    data = MixedModelData(design.X, design.cluster_codes, names)
    fits = replicate_fits(data, [s.lbw for s in imputed_sets], threads)
    est = np.array([f.estimate_vector(names) for f in fits])
    var = np.array([
        [f.standard_errors[n] ** 2 for n in names] for f in fits
    ])
    pooled = rubin_combine(est, var, names)

    cells = design.cell_masks
    a = _cell_rate(design.observed_lbw, cells["hl_early"])
    b = _cell_rate(design.observed_lbw, cells["hl_late"])
    c = _cell_rate(design.observed_lbw, cells["hh_early"])
    d = _cell_rate(design.observed_lbw, cells["hh_late"])
    naive_k1, naive_k2, naive_k3 = did_contrasts(a, b, c, d)

    covariates = design.covariate_names()
    beta = np.array([pooled[n].estimate for n in covariates])
    cov_cols = [names.index(n) for n in covariates]
    early = design.X[np.ix_(cells["hl_early"], cov_cols)]
    late = design.X[np.ix_(cells["hl_late"], cov_cols)]
    if len(early) and len(late):
        drift = float(beta @ (late.mean(axis=0) - early.mean(axis=0)))
    else:
        drift = math.nan

    return PrimaryResult(
        pooled=pooled,
        naive_k1=naive_k1, naive_k2=naive_k2, naive_k3=naive_k3,
        covariate_drift=drift,
        m=len(imputed_sets),
        n_records=design.n_records,
        n_clusters=design.n_clusters,
        sigma0_sq_mean=float(np.mean([f.sigma0_sq for f in fits])),
        sigma1_sq_mean=float(np.mean([f.sigma1_sq for f in fits])),
    )


# ---------------------------------------------------------------------------
# artifacts


def write_results_csv(pooled: Mapping[str, PooledEstimate], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_COLUMNS)
        for name, p in pooled.items():
            writer.writerow([name, fmt(p.estimate), fmt(p.ci_low),
                             fmt(p.ci_high), fmt(p.p_value)])


def write_diagnostics_csv(pooled: Mapping[str, PooledEstimate], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DIAGNOSTICS_COLUMNS)
        for name, p in pooled.items():
            writer.writerow([name, fmt(p.between_var), fmt(p.within_var),
                             fmt(p.var_ratio)])
