"""Omitted-variable sensitivity analysis.

For prespecified percentage-point shifts (p1, p2), a hypothetical binary
covariate U is regenerated inside each imputed data set with
P(U=1) = 0.5 + p1/100 * 1(low prevalence) + p2/100 * 1(completed outcome),
the outcome model is refitted with U as an extra regressor, and the
low-prevalence coefficient (and the U coefficient, which is estimated,
never fixed) are pooled by Rubin's rules. The grid sweep groups results
into the four sign cases of (p1, p2).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._util import fmt, substream
from .errors import DataValidationError
from .infer import (
    REGRESSORS,
    InferenceDesign,
    MixedModelData,
    PooledEstimate,
    replicate_fits,
    rubin_combine,
)
from .model import validate_u_probabilities

U_REGRESSOR = "unobserved_u"
EXTENDED_REGRESSORS: Tuple[str, ...] = REGRESSORS + (U_REGRESSOR,)

DEFAULT_P1_GRID: Tuple[float, ...] = (2.5, 5.0, 7.5, 10.0, -2.5, -5.0, -7.5, -10.0)
DEFAULT_P2_GRID: Tuple[float, ...] = (5.0, 10.0, -5.0, -10.0)

SENSITIVITY_COLUMNS = ["case", "p1", "p2", "estimate", "ci_low", "ci_high",
                       "p_value", "note"]


def case_label(p1: float, p2: float) -> int:
    """1: both positive; 2: p1>0, p2<0; 3: p1<0, p2>0; 4: both negative;
    0 when either parameter sits on the boundary."""
    if p1 > 0 and p2 > 0:
        return 1
    if p1 > 0 and p2 < 0:
        return 2
    if p1 < 0 and p2 > 0:
        return 3
    if p1 < 0 and p2 < 0:
        return 4
    return 0


def u_probability(low_prevalence, completed_lbw, p1: float, p2: float):
    """P(U=1) = 0.5 + p1/100 on low-prevalence records + p2/100 on
    completed-outcome-positive records."""
    low = np.asarray(low_prevalence, dtype=float)
    lbw = np.asarray(completed_lbw, dtype=float)
    if low.shape != lbw.shape:
        raise DataValidationError("indicator vectors misaligned")
    return 0.5 + (p1 / 100.0) * low + (p2 / 100.0) * lbw


def gen_u(
    low_prevalence: np.ndarray,
    completed_lbw: np.ndarray,
    p1: float,
    p2: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One independent 0/1 draw per record. Every attainable probability
    is validated before any draw happens."""
    validate_u_probabilities(p1, p2)
    prob = u_probability(low_prevalence, completed_lbw, p1, p2)
    return (rng.random(len(prob)) < prob).astype(np.int8)


@dataclass(frozen=True)
class SensitivityResult:
    p1: float
    p2: float
    case: int
    k1: PooledEstimate
    lam: PooledEstimate
    pooled: Dict[str, PooledEstimate]


def sensitivity_fit(
    design: InferenceDesign,
    imputed_sets,
    p1: float,
    p2: float,
    seed: int,
    threads: int = 1,
) -> SensitivityResult:
    """Refit the outcome model with a fresh U per replicate and pool.

    The U draw for replicate m runs on the substream keyed by
    (seed, p1, p2, m), so grid points and replicates are independent and
    the whole table is reproducible for a fixed seed.
    """
    validate_u_probabilities(p1, p2)
    if len(imputed_sets) < 2:
        raise DataValidationError("sensitivity analysis needs M >= 2 imputations")
    names = design.regressors + (U_REGRESSOR,)
    low = design.X[:, design.regressors.index("low_prevalence")]

    datasets, ys = [], []
    for s in imputed_sets:
        rng = substream(seed, "sensan", p1, p2, s.replicate)
        u = gen_u(low, s.lbw, p1, p2, rng)
        X_ext = np.column_stack([design.X, u.astype(float)])
        datasets.append(MixedModelData(X_ext, design.cluster_codes, names))
        ys.append(s.lbw.astype(float))
    results = replicate_fits_multi(datasets, ys, threads)

    est = np.array([[f.estimates[n] for n in names] for f in results])
    var = np.array([[f.standard_errors[n] ** 2 for n in names]
                    for f in results])
    pooled = rubin_combine(est, var, names)
    return SensitivityResult(
        p1=p1, p2=p2, case=case_label(p1, p2),
        k1=pooled["low_prevalence"], lam=pooled[U_REGRESSOR], pooled=pooled,
    )


def replicate_fits_multi(datasets: Sequence[MixedModelData],
                         ys: Sequence[np.ndarray], threads: int = 1):
    """Like infer.replicate_fits but each replicate has its own design
    matrix (the U column differs)."""
    if threads <= 1 or len(datasets) <= 1:
        return [d.fit(y) for d, y in zip(datasets, ys)]
    from concurrent.futures import ThreadPoolExecutor

    results = [None] * len(datasets)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {
            pool.submit(d.fit, y): i
            for i, (d, y) in enumerate(zip(datasets, ys))
        }
        for future in futures:
            results[futures[future]] = future.result()
    return results


@dataclass(frozen=True)
class SensitivityRow:
    case: int
    p1: float
    p2: float
    estimate: float
    ci_low: float
    ci_high: float
    p_value: float
    lam_estimate: float
    skipped: bool = False
    note: str = ""


def default_grid() -> List[Tuple[float, float]]:
    """The 32-point grid: four sign cases, |p1| in {2.5, 5, 7.5, 10},
    |p2| in {5, 10}, ordered by case then magnitudes."""
    points = []
    for case_p1, case_p2 in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        for a1 in (2.5, 5.0, 7.5, 10.0):
            for a2 in (5.0, 10.0):
                points.append((case_p1 * a1, case_p2 * a2))
    return points


def sensitivity_grid(
    design: InferenceDesign,
    imputed_sets,
    seed: int,
    grid: Optional[Sequence[Tuple[float, float]]] = None,
    threads: int = 1,
) -> List[SensitivityRow]:
    """One sensitivity fit per grid point; invalid points are skipped with
    a warning row rather than aborting the sweep."""
    rows: List[SensitivityRow] = []
    for p1, p2 in (default_grid() if grid is None else list(grid)):
        try:
            validate_u_probabilities(p1, p2)
        except DataValidationError as exc:
            rows.append(SensitivityRow(
                case=case_label(p1, p2), p1=p1, p2=p2,
                estimate=math.nan, ci_low=math.nan, ci_high=math.nan,
                p_value=math.nan, lam_estimate=math.nan,
                skipped=True, note=str(exc),
            ))
            continue
        res = sensitivity_fit(design, imputed_sets, p1, p2, seed, threads)
        rows.append(SensitivityRow(
            case=res.case, p1=p1, p2=p2,
            estimate=res.k1.estimate, ci_low=res.k1.ci_low,
            ci_high=res.k1.ci_high, p_value=res.k1.p_value,
            lam_estimate=res.lam.estimate,
        ))
    return rows


def write_sensitivity_csv(rows: Sequence[SensitivityRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SENSITIVITY_COLUMNS)
        for r in rows:
            if r.skipped:
                writer.writerow([r.case, fmt(r.p1), fmt(r.p2),
                                 "", "", "", "", f"skipped: {r.note}"])
            else:
                writer.writerow([r.case, fmt(r.p1), fmt(r.p2),
                                 fmt(r.estimate), fmt(r.ci_low),
                                 fmt(r.ci_high), fmt(r.p_value), ""])
