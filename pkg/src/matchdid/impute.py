"""Bayesian logistic imputation of the missing low-birth-weight indicator.

The model is fitted on records with an observed outcome by maximizing the
log-likelihood plus independent Cauchy log-prior densities (center 0;
scale 10 for the intercept, 2.5 for binary predictors, 2.5/(2 sd) for the
remaining numeric predictors). The posterior is approximated by a normal
centered at the penalized mode with covariance equal to the inverse
negative Hessian there, and each replicate draws coefficients from that
approximation before drawing Bernoulli outcomes for the missing records.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ._util import fmt, substream
from .errors import ConvergenceError, DataValidationError
from .model import BirthRecord, BirthSize

# Fixed design column order of the imputation model.
IMPUTATION_COLUMNS: Tuple[str, ...] = (
    "intercept",
    "mother_age",
    "mother_age_sq",
    "wealth_index",
    "birth_order",
    "birth_order_sq",
    "urban",
    "mother_education",
    "child_is_boy",
    "married",
    "antenatal",
    "size_small",
    "size_large",
)

MAX_NEWTON_ITER = 100
GRAD_TOL = 1e-8


def imputation_row(r: BirthRecord) -> List[float]:
    age = float(r.mother_age_years)
    order = float(r.birth_order_code)
    return [
        1.0,
        age,
        age * age,
        float(r.wealth_index),
        order,
        order * order,
        float(r.urban),
        float(r.mother_education),
        float(r.child_is_boy),
        float(r.married),
        float(r.antenatal),
        1.0 if r.reported_size is BirthSize.SMALL else 0.0,
        1.0 if r.reported_size is BirthSize.LARGE else 0.0,
    ]


def design_matrix(records: Sequence[BirthRecord]) -> np.ndarray:
    if any(r.reported_size is None for r in records):
        raise DataValidationError(
            "imputation design requires reported_size on every record "
            "(run filter_births first)"
        )
    if not records:
        return np.empty((0, len(IMPUTATION_COLUMNS)))
    return np.array([imputation_row(r) for r in records], dtype=float)


def prior_scales(X: np.ndarray) -> np.ndarray:
    """Per-coefficient Cauchy scales from the fitting records."""
    scales = np.empty(X.shape[1])
    scales[0] = 10.0
    for j in range(1, X.shape[1]):
        col = X[:, j]
        values = set(np.unique(col)) if len(col) else set()
        if len(col) == 0 or values <= {0.0, 1.0}:
            scales[j] = 2.5
        else:
            sd = float(col.std(ddof=1)) if len(col) > 1 else 0.0
            scales[j] = 2.5 / (2.0 * sd) if sd > 0 else 2.5
    return scales


@dataclass(frozen=True)
class ImputationModel:
    coefficients: np.ndarray        # posterior mode
    covariance: np.ndarray          # Laplace covariance at the mode
    prior_scales: np.ndarray
    column_names: Tuple[str, ...] = IMPUTATION_COLUMNS

    def __post_init__(self):
        p = len(self.coefficients)
        if self.covariance.shape != (p, p):
            raise DataValidationError("covariance shape mismatch")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-10):
            raise DataValidationError("covariance must be symmetric")

    def probability(self, X: np.ndarray, beta: Optional[np.ndarray] = None):
        beta = self.coefficients if beta is None else beta
        return _sigmoid(X @ beta)


@dataclass(frozen=True)
class ImputedSet:
    replicate: int                  # 1-based
    lbw: np.ndarray                 # completed outcome, aligned with records
    substream_id: str


def _sigmoid(eta):
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -35.0, 35.0)))


def _objective(beta, X, y, scales):
    eta = np.clip(X @ beta, -35.0, 35.0)
    loglik = float(y @ eta - np.logaddexp(0.0, eta).sum()) if len(y) else 0.0
    logprior = float(np.sum(-np.log(np.pi * scales)
                            - np.log1p((beta / scales) ** 2)))
    return loglik + logprior


def _grad_neghess(beta, X, y, scales):
    p = _sigmoid(X @ beta) if len(y) else np.zeros(0)
    grad_lik = X.T @ (y - p) if len(y) else np.zeros(len(beta))
    denom = scales ** 2 + beta ** 2
    grad_prior = -2.0 * beta / denom
    w = p * (1.0 - p)
    neg_hess_lik = (X * w[:, None]).T @ X if len(y) else np.zeros((len(beta),) * 2)
    neg_hess_prior = np.diag(2.0 * (scales ** 2 - beta ** 2) / denom ** 2)
    return grad_lik + grad_prior, neg_hess_lik + neg_hess_prior


def penalized_logistic_mode(
    X: np.ndarray, y: np.ndarray, scales: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Maximize log-likelihood + Cauchy log-priors by Newton iteration
    with step halving; returns (mode, Laplace covariance).

    Columns are rms-rescaled internally (an exact reparameterization; the
    Cauchy scales rescale with them) so the gradient tolerance is applied
    on O(1) columns; raw quadratic terms like age^2 would otherwise pin
    the attainable gradient norm above the tolerance.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    scales = np.asarray(scales, dtype=float)
    if len(X):
        col_scale = np.sqrt(np.mean(X * X, axis=0))
        col_scale[col_scale < 1e-12] = 1.0
    else:
        col_scale = np.ones(X.shape[1])
    X = X / col_scale
    scales = scales * col_scale
    beta = np.zeros(X.shape[1])
    trace = []
    for iteration in range(MAX_NEWTON_ITER):
        grad, neg_hess = _grad_neghess(beta, X, y, scales)
        grad_norm = float(np.max(np.abs(grad)))
        trace.append(f"iter {iteration}: max|grad|={grad_norm:.3e}")
        if grad_norm < GRAD_TOL:
            break
        try:
            step = np.linalg.solve(neg_hess, grad)
        except np.linalg.LinAlgError:
            raise ConvergenceError(
                "singular curvature in imputation model fit\n" + "\n".join(trace)
            ) from None
        base = _objective(beta, X, y, scales)
        # near the mode the quadratic gain sits below the float resolution
        # of the objective, so only measurable worsening triggers halving
        slack = 1e-9 * (1.0 + abs(base))
        scale = 1.0
        while (scale > 1e-10
               and _objective(beta + scale * step, X, y, scales) < base - slack):
            scale *= 0.5
        beta = beta + scale * step
    else:
        raise ConvergenceError(
            f"imputation model did not converge in {MAX_NEWTON_ITER} iterations\n"
            + "\n".join(trace)
        )

    _, neg_hess = _grad_neghess(beta, X, y, scales)
    try:
        chol = np.linalg.cholesky(neg_hess)
    except np.linalg.LinAlgError:
        raise ConvergenceError(
            "negative Hessian at the mode is not positive definite"
        ) from None
    inv_chol = np.linalg.solve(chol, np.eye(len(beta)))
    covariance = inv_chol.T @ inv_chol
    covariance = (covariance + covariance.T) / 2.0
    # undo the internal column scaling
    beta = beta / col_scale
    covariance = covariance / np.outer(col_scale, col_scale)
    return beta, covariance


def fit_imputation_model(records: Sequence[BirthRecord]) -> ImputationModel:
    """Posterior mode and Laplace covariance of the imputation model.

    ``records`` are the observed-outcome rows. With no rows at all the
    prior alone is maximized, so the mode is the zero vector; with rows
    present both outcome classes must occur.
    """
    if any(r.lbw is None for r in records):
        raise DataValidationError("fit_imputation_model needs observed outcomes")
    X = design_matrix(records)
    y = np.array([r.lbw for r in records], dtype=float)
    if len(y) and (y.min() == y.max()):
        raise DataValidationError(
            "need at least one observed record of each outcome class"
        )
    scales = prior_scales(X)
    beta, covariance = penalized_logistic_mode(X, y, scales)
    return ImputationModel(coefficients=beta, covariance=covariance,
                           prior_scales=scales)


def draw_imputations(
    model: ImputationModel,
    records: Sequence[BirthRecord],
    m: int,
    seed: int,
) -> List[ImputedSet]:
    """M completed outcome vectors over ``records`` (observed entries kept).

    Each replicate draws coefficients from the normal posterior
    approximation, then Bernoulli outcomes for the missing records. Every
    replicate uses its own counter-based substream keyed by (seed,
    replicate), so the result is independent of scheduling and of which
    records happen to be missing.
    """
    if m < 1:
        raise DataValidationError("number of imputations must be >= 1")
    X = design_matrix(records)
    observed = np.array([-1 if r.lbw is None else r.lbw for r in records])
    missing = observed < 0
    chol = np.linalg.cholesky(
        model.covariance + 1e-12 * np.eye(len(model.coefficients))
    )
    sets: List[ImputedSet] = []
    for replicate in range(1, m + 1):
        rng = substream(seed, "impute", replicate)
        beta_star = model.coefficients + chol @ rng.standard_normal(
            len(model.coefficients)
        )
        u = rng.random(len(records))
        lbw = observed.astype(np.int8).copy()
        if missing.any():
            p = _sigmoid(X[missing] @ beta_star)
            lbw[missing] = (u[missing] < p).astype(np.int8)
        sets.append(ImputedSet(
            replicate=replicate, lbw=lbw,
            substream_id=f"({seed},impute,{replicate})",
        ))
    return sets


# ---------------------------------------------------------------------------
# audit dump


def write_imputations_csv(
    records: Sequence[BirthRecord], sets: Sequence[ImputedSet], path
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replicate", "child_id", "lbw"])
        for s in sets:
            for r, value in zip(records, s.lbw):
                writer.writerow([s.replicate, r.child_id, fmt(int(value))])


def read_imputations_csv(
    records: Sequence[BirthRecord], path
) -> List[ImputedSet]:
    by_replicate = {}
    index = {r.child_id: i for i, r in enumerate(records)}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if list(reader.fieldnames or []) != ["replicate", "child_id", "lbw"]:
            raise DataValidationError(f"{path}: unexpected imputations.csv header")
        for row in reader:
            rep = int(row["replicate"])
            vec = by_replicate.setdefault(
                rep, np.full(len(records), -1, dtype=np.int8)
            )
            try:
                vec[index[row["child_id"]]] = int(row["lbw"])
            except KeyError:
                raise DataValidationError(
                    f"{path}: imputation row for unknown child {row['child_id']}"
                ) from None
    sets = []
    for rep in sorted(by_replicate):
        vec = by_replicate[rep]
        if (vec < 0).any():
            raise DataValidationError(
                f"{path}: replicate {rep} does not cover every record"
            )
        sets.append(ImputedSet(replicate=rep, lbw=vec, substream_id="from-file"))
    return sets
