"""Geographic pairing of early and late survey clusters within a country.

Distances are rank-based Mahalanobis distances on (latitude, longitude),
with a soft propensity-score caliper penalty; pairs are chosen by an exact
minimum-cost assignment so the total distance over min(n_early, n_late)
disjoint pairs is as small as possible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from ._util import fmt
from .errors import ConvergenceError, DataValidationError
from .model import ClusterPair, ClusterRecord, GeoPoint, PairCategory

EARTH_RADIUS_KM = 6371.0

PAIRS_COLUMNS = ["country", "early_id", "late_id", "rank_distance",
                 "haversine_km", "category"]


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in kilometers."""
    lat1, lon1 = math.radians(a.latitude_deg), math.radians(a.longitude_deg)
    lat2, lon2 = math.radians(b.latitude_deg), math.radians(b.longitude_deg)
    s = (math.sin((lat2 - lat1) / 2.0) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(s)))


@dataclass(frozen=True)
class CaliperSpec:
    """Soft propensity caliper. None means: width = 0.2 x sd of the fitted
    propensities, penalty = 1000 x the largest base distance."""

    width: Optional[float] = None
    penalty: Optional[float] = None


@dataclass(frozen=True)
class DistanceMatrix:
    """Rows are early clusters, columns late clusters. ``values`` carries
    the caliper penalty; ``base`` is the bare rank-Mahalanobis distance."""

    early_ids: Tuple[str, ...]
    late_ids: Tuple[str, ...]
    values: np.ndarray
    base: np.ndarray
    propensity_early: np.ndarray
    propensity_late: np.ndarray
    caliper_width: float
    caliper_penalty: float

    def __post_init__(self):
        if self.values.shape != (len(self.early_ids), len(self.late_ids)):
            raise DataValidationError("distance matrix shape mismatch")
        if not np.all(np.isfinite(self.values)):
            raise DataValidationError("distance matrix entries must be finite")


def _logistic_propensity(coords: np.ndarray, is_late: np.ndarray) -> np.ndarray:
    """Ridge-stabilized logistic regression of late-period membership on
    raw (lat, lon); the ridge keeps perfectly separated geographies finite."""
    X = np.column_stack([np.ones(len(coords)), coords])
    y = is_late.astype(float)
    ridge = 1e-4
    beta = np.zeros(X.shape[1])
    for _ in range(50):
        eta = np.clip(X @ beta, -35.0, 35.0)
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = X.T @ (y - p) - ridge * beta
        w = np.maximum(p * (1.0 - p), 1e-10)
        hess = (X * w[:, None]).T @ X + ridge * np.eye(X.shape[1])
        step = np.linalg.solve(hess, grad)
        # step halving on the penalized log-likelihood
        def obj(b):
            e = np.clip(X @ b, -35.0, 35.0)
            return float(y @ e - np.logaddexp(0.0, e).sum() - 0.5 * ridge * b @ b)
        base_obj, scale = obj(beta), 1.0
        while scale > 1e-8 and obj(beta + scale * step) < base_obj:
            scale *= 0.5
        beta = beta + scale * step
        if np.max(np.abs(grad)) < 1e-10:
            break
    eta = np.clip(X @ beta, -35.0, 35.0)
    return 1.0 / (1.0 + np.exp(-eta))


def rank_mahalanobis(
    early: Sequence[ClusterRecord],
    late: Sequence[ClusterRecord],
    caliper: CaliperSpec = CaliperSpec(),
) -> DistanceMatrix:
    """Distance matrix between early and late clusters.

    Latitude and longitude are replaced by their average ranks over the
    pooled early+late set; the Mahalanobis form uses the covariance of
    those ranks (ridged by 1e-8 I when singular). Entries whose propensity
    scores differ by more than the caliper width get the penalty added.
    """
    if not early or not late:
        raise DataValidationError("need at least one cluster on each side")
    coords = np.array(
        [[c.location.latitude_deg, c.location.longitude_deg]
         for c in list(early) + list(late)]
    )
    n_early = len(early)
    ranks = np.column_stack([rankdata(coords[:, j], method="average")
                             for j in range(2)])
    cov = np.cov(ranks, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    try:
        cov_inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        cov_inv = np.linalg.inv(cov + 1e-8 * np.eye(2))
    else:
        if not np.all(np.isfinite(cov_inv)) or np.linalg.cond(cov) > 1e12:
            cov_inv = np.linalg.inv(cov + 1e-8 * np.eye(2))

    diff = ranks[:n_early, None, :] - ranks[None, n_early:, :]
    base = np.sqrt(np.maximum(np.einsum("ijk,kl,ijl->ij", diff, cov_inv, diff), 0.0))

    is_late = np.zeros(len(coords), dtype=bool)
    is_late[n_early:] = True
    propensity = _logistic_propensity(coords, is_late)
    p_early, p_late = propensity[:n_early], propensity[n_early:]

    width = caliper.width
    if width is None:
        width = 0.2 * float(np.std(propensity, ddof=1)) if len(propensity) > 1 else 0.0
    penalty = caliper.penalty
    if penalty is None:
        penalty = 1000.0 * float(base.max())

    values = base.copy()
    violated = np.abs(p_early[:, None] - p_late[None, :]) > width
    values[violated] += penalty

    return DistanceMatrix(
        early_ids=tuple(c.cluster_id for c in early),
        late_ids=tuple(c.cluster_id for c in late),
        values=values,
        base=base,
        propensity_early=p_early,
        propensity_late=p_late,
        caliper_width=width,
        caliper_penalty=penalty,
    )


def assignment_indices(
    cost: np.ndarray, lexicographic: bool = True
) -> List[Tuple[int, int]]:
    """Exact min-cost assignment of min(n, m) disjoint row/col pairs.

    With ``lexicographic`` the returned pair list (sorted by row) is the
    lexicographically smallest among all minimum-cost assignments, so the
    result does not depend on solver internals when optima tie.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.size == 0:
        raise DataValidationError("cost matrix must be 2-D and nonempty")
    if not np.all(np.isfinite(cost)):
        raise DataValidationError("cost matrix entries must be finite")
    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())
    if not lexicographic:
        return sorted(zip(rows.tolist(), cols.tolist()))

    tol = 1e-9 * max(1.0, abs(best))
    n, m = cost.shape
    remaining_rows = list(range(n))
    remaining_cols = list(range(m))
    pairs: List[Tuple[int, int]] = []
    pairs_needed = min(n, m)
    fixed = 0.0

    def completion_cost(row_idx, col_idx):
        if not row_idx or not col_idx:
            return 0.0
        sub = cost[np.ix_(row_idx, col_idx)]
        r, c = linear_sum_assignment(sub)
        return float(sub[r, c].sum())

    while len(pairs) < pairs_needed:
        if not remaining_rows:
            raise ConvergenceError(
                "lexicographic assignment refinement lost feasibility; "
                "cost tolerance too tight for this matrix"
            )
        r = remaining_rows[0]
        rest_rows = remaining_rows[1:]
        matched = False
        for c in remaining_cols:
            rest_cols = [x for x in remaining_cols if x != c]
            total = fixed + cost[r, c] + completion_cost(rest_rows, rest_cols)
            if total <= best + tol:
                pairs.append((r, c))
                fixed += float(cost[r, c])
                remaining_rows = rest_rows
                remaining_cols = rest_cols
                matched = True
                break
        if not matched:
            # every optimum leaves this row unmatched (only possible n > m)
            remaining_rows = rest_rows
    return pairs


def optimal_pairing(d: DistanceMatrix) -> List[Tuple[str, str]]:
    """Pair early with late cluster ids minimizing the total distance.

    Exactly min(n_early, n_late) disjoint pairs come back, ordered by
    early id position; ties between equal-cost optima break
    lexicographically on (early_id, late_id).
    """
    order_e = np.argsort(np.array(d.early_ids, dtype=object))
    order_l = np.argsort(np.array(d.late_ids, dtype=object))
    sorted_cost = d.values[np.ix_(order_e, order_l)]
    pairs = assignment_indices(sorted_cost, lexicographic=True)
    return [(d.early_ids[order_e[i]], d.late_ids[order_l[j]]) for i, j in pairs]


def match_country(
    early: Sequence[ClusterRecord],
    late: Sequence[ClusterRecord],
    caliper: CaliperSpec = CaliperSpec(),
) -> List[ClusterPair]:
    """Run the full step for one country: distances, assignment, and
    ClusterPair construction with the within-pair Haversine distance."""
    d = rank_mahalanobis(early, late, caliper)
    by_id = {c.cluster_id: c for c in list(early) + list(late)}
    pairs = []
    for early_id, late_id in optimal_pairing(d):
        e, l = by_id[early_id], by_id[late_id]
        pairs.append(ClusterPair(
            early=e, late=l,
            geo_distance_km=haversine_km(e.location, l.location),
        ))
    return pairs


def rank_distance_lookup(d: DistanceMatrix) -> dict:
    idx_e = {cid: i for i, cid in enumerate(d.early_ids)}
    idx_l = {cid: j for j, cid in enumerate(d.late_ids)}
    return {
        (e, l): float(d.values[idx_e[e], idx_l[l]])
        for e in d.early_ids for l in d.late_ids
    }


# ---------------------------------------------------------------------------
# pairs.csv


def write_pairs_csv(
    pairs: Sequence[ClusterPair], path, rank_distances: Optional[dict] = None
) -> None:
    """country, early_id, late_id, rank_distance, haversine_km, category.

    The category column stays empty until classification fills it.
    """
    rank_distances = rank_distances or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PAIRS_COLUMNS)
        for p in pairs:
            key = (p.early.cluster_id, p.late.cluster_id)
            writer.writerow([
                p.country, p.early.cluster_id, p.late.cluster_id,
                fmt(rank_distances.get(key)), fmt(p.geo_distance_km),
                "" if p.category is None else p.category.value,
            ])


def read_pairs_csv(path, clusters_by_id) -> List[ClusterPair]:
    pairs: List[ClusterPair] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if list(reader.fieldnames or []) != PAIRS_COLUMNS:
            raise DataValidationError(f"{path}: unexpected pairs.csv header")
        for row in reader:
            try:
                early = clusters_by_id[row["early_id"]]
                late = clusters_by_id[row["late_id"]]
            except KeyError as exc:
                raise DataValidationError(
                    f"{path}: pair references unknown cluster {exc}"
                ) from None
            category = row["category"]
            pairs.append(ClusterPair(
                early=early, late=late,
                category=None if category == "" else PairCategory(category),
                geo_distance_km=float(row["haversine_km"]),
            ))
    return pairs
