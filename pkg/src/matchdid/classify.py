"""Prevalence levels and pair categories for the matched cluster pairs."""

from __future__ import annotations

from typing import Iterable, List

from .errors import DataValidationError
from .model import (
    STUDY_YEARS,
    ClusterPair,
    ClusterRecord,
    ModelSpec,
    PairCategory,
    PrevalenceLevel,
)


def prevalence_level(pfpr: float, spec: ModelSpec = ModelSpec()) -> PrevalenceLevel:
    """High above cutoff_high, low below cutoff_low, medium on the closed
    interval between them (both cutoffs use strict inequalities)."""
    if not 0.0 <= pfpr <= 1.0:
        raise DataValidationError(f"pfpr {pfpr} outside [0, 1]")
    if pfpr > spec.cutoff_high:
        return PrevalenceLevel.HIGH
    if pfpr < spec.cutoff_low:
        return PrevalenceLevel.LOW
    return PrevalenceLevel.MEDIUM


def _always_zero_in_window(cluster: ClusterRecord) -> bool:
    rates = [cluster.pfpr_by_year[y] for y in STUDY_YEARS if y in cluster.pfpr_by_year]
    return bool(rates) and all(r == 0.0 for r in rates)


def pair_category(pair: ClusterPair, spec: ModelSpec = ModelSpec()) -> PairCategory:
    """Category of one early/late pair from the rates at each cluster's
    assigned prevalence year.

    A would-be treated pair whose late cluster shows zero prevalence for
    every study-window year is excluded as not comparable in transmission
    intensity.
    """
    early_rate = pair.early.pfpr_at(pair.early.prevalence_year)
    late_rate = pair.late.pfpr_at(pair.late.prevalence_year)

    both_high = early_rate > spec.cutoff_high and late_rate > spec.cutoff_high
    if both_high and abs(early_rate - late_rate) < spec.highhigh_gap:
        return PairCategory.HIGH_HIGH
    if early_rate > spec.cutoff_high and late_rate < spec.cutoff_low:
        if _always_zero_in_window(pair.late):
            return PairCategory.EXCLUDED
        return PairCategory.HIGH_LOW
    return PairCategory.OTHER


def classify_pairs(
    pairs: Iterable[ClusterPair], spec: ModelSpec = ModelSpec()
) -> List[ClusterPair]:
    """Return the pairs with their category field filled in."""
    return [p.with_category(pair_category(p, spec)) for p in pairs]
