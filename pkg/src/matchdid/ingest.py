"""Input parsing and eligibility rules.

Reads the three input tables (clusters, prevalence, births), selects each
country's early/late study years, aggregates individual rows to cluster
covariate means, and applies the record exclusions used before imputation.

File contracts (UTF-8, comma separated, '.' decimal point, header row
required; empty string means missing):

* clusters.csv:   cluster_id, country, survey_year, role, lat, lon, urban,
                  electricity, floor, toilet, mother_education, contraception
* prevalence.csv: cluster_id, year, pfpr
* births.csv:     child_id, cluster_id, mother_age_years, birth_order_code,
                  wealth_index, urban, mother_education, child_is_boy,
                  married, antenatal, reported_size, multiple_birth,
                  child_age_years, lbw
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from ._util import fmt
from .errors import DataValidationError
from .model import (
    COVARIATE_NAMES,
    BirthRecord,
    BirthSize,
    ClusterRecord,
    GeoPoint,
    Role,
    prevalence_year_for,
)

EARLY_WINDOW = (2000, 2007)
LATE_WINDOW = (2008, 2015)
FALLBACK_EARLY_YEARS = (1999, 1998)

CLUSTER_COLUMNS = [
    "cluster_id", "country", "survey_year", "role", "lat", "lon",
    "urban", "electricity", "floor", "toilet", "mother_education",
    "contraception",
]
PREVALENCE_COLUMNS = ["cluster_id", "year", "pfpr"]
BIRTH_COLUMNS = [
    "child_id", "cluster_id", "mother_age_years", "birth_order_code",
    "wealth_index", "urban", "mother_education", "child_is_boy", "married",
    "antenatal", "reported_size", "multiple_birth", "child_age_years", "lbw",
]


@dataclass(frozen=True)
class CountryAvailability:
    """Years with a usable survey (incl. GPS) and years with prevalence
    estimates, for one country."""

    dhs_years: frozenset
    prevalence_years: frozenset

    def __post_init__(self):
        bad = [y for y in self.dhs_years | self.prevalence_years if y < 1998]
        if bad:
            raise DataValidationError(f"availability years before 1998: {sorted(bad)}")


@dataclass(frozen=True)
class AvailabilityTable:
    countries: Mapping[str, CountryAvailability]


@dataclass(frozen=True)
class StudySelection:
    early_year: int
    late_year: int
    prevalence_early_year: int
    prevalence_late_year: int


def select_study_years(
    avail: AvailabilityTable,
) -> Dict[str, Optional[StudySelection]]:
    """Pick each country's study years, or None when it is excluded.

    The earliest survey in 2000-2007 and the latest in 2008-2015 are chosen
    (1999, possibly coded 1998, substitutes for a missing early survey and
    borrows the 2000 prevalence estimate). A country must also have
    prevalence estimates for both selected prevalence years.
    """
    out: Dict[str, Optional[StudySelection]] = {}
    for country, ca in avail.countries.items():
        early_candidates = sorted(
            y for y in ca.dhs_years if EARLY_WINDOW[0] <= y <= EARLY_WINDOW[1]
        )
        late_candidates = sorted(
            y for y in ca.dhs_years if LATE_WINDOW[0] <= y <= LATE_WINDOW[1]
        )
        early: Optional[int] = early_candidates[0] if early_candidates else None
        if early is None:
            for fallback in FALLBACK_EARLY_YEARS:
                if fallback in ca.dhs_years:
                    early = fallback
                    break
        late = late_candidates[-1] if late_candidates else None

        if early is None or late is None:
            out[country] = None
            continue
        prev_early = prevalence_year_for(early)
        prev_late = prevalence_year_for(late)
        if prev_early not in ca.prevalence_years or prev_late not in ca.prevalence_years:
            out[country] = None
            continue
        out[country] = StudySelection(early, late, prev_early, prev_late)
    return out


def aggregate_cluster_covariates(
    rows: Sequence[Mapping[str, Optional[float]]],
) -> Dict[str, Optional[float]]:
    """Average the six covariates over individual rows, leaving out all
    missing values. A covariate missing in every row comes back as None."""
    if not rows:
        raise DataValidationError("cannot aggregate an empty cluster")
    means: Dict[str, Optional[float]] = {}
    for name in COVARIATE_NAMES:
        values = [r[name] for r in rows if r.get(name) is not None]
        means[name] = sum(values) / len(values) if values else None
    return means


@dataclass
class FilterCounts:
    total_in: int = 0
    multiple_births: int = 0
    missing_reported_size: int = 0
    remaining: int = 0


def filter_births(
    records: Sequence[BirthRecord],
) -> Tuple[List[BirthRecord], FilterCounts]:
    """Drop multiple births, then records with missing reported size.

    Order is preserved and per-rule exclusion counts are returned.
    """
    counts = FilterCounts(total_in=len(records))
    singletons = [r for r in records if r.multiple_birth == 0]
    counts.multiple_births = len(records) - len(singletons)
    kept = [r for r in singletons if r.reported_size is not None]
    counts.missing_reported_size = len(singletons) - len(kept)
    counts.remaining = len(kept)
    return kept, counts


# ---------------------------------------------------------------------------
# CSV reading


def _read_table(path, expected_columns) -> Iterable[Tuple[int, Dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataValidationError(f"{path}: empty file, header row required")
        if list(reader.fieldnames) != expected_columns:
            raise DataValidationError(
                f"{path}: header {reader.fieldnames} does not match "
                f"expected {expected_columns}"
            )
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def _opt_float(text: str) -> Optional[float]:
    return None if text == "" else float(text)


def read_prevalence(path) -> Tuple[Dict[str, Dict[int, float]], List[str]]:
    """Long-format prevalence table -> {cluster_id: {year: pfpr}}."""
    table: Dict[str, Dict[int, float]] = {}
    warnings: List[str] = []
    for lineno, row in _read_table(path, PREVALENCE_COLUMNS):
        try:
            year = int(row["year"])
            pfpr = float(row["pfpr"])
            if not 0.0 <= pfpr <= 1.0:
                raise ValueError(f"pfpr {pfpr} outside [0, 1]")
            table.setdefault(row["cluster_id"], {})[year] = pfpr
        except (ValueError, DataValidationError) as exc:
            warnings.append(f"{path}:{lineno}: skipped prevalence row: {exc}")
    return table, warnings


def read_clusters(
    clusters_path, prevalence_path
) -> Tuple[List[ClusterRecord], List[str]]:
    """Parse clusters and attach their prevalence trajectories.

    Row-level failures are reported and skipped; parsing continues. A
    cluster whose trajectory lacks its own prevalence year is kept but
    flagged, since downstream classification will need that year.
    """
    prevalence, warnings = read_prevalence(prevalence_path)
    clusters: List[ClusterRecord] = []
    for lineno, row in _read_table(clusters_path, CLUSTER_COLUMNS):
        try:
            covariates = {name: _opt_float(row[name]) for name in COVARIATE_NAMES}
            record = ClusterRecord(
                cluster_id=row["cluster_id"],
                country=row["country"],
                survey_year=int(row["survey_year"]),
                role=Role(row["role"]),
                location=GeoPoint(float(row["lat"]), float(row["lon"])),
                covariates=covariates,
                pfpr_by_year=prevalence.get(row["cluster_id"], {}),
            )
        except (ValueError, KeyError, DataValidationError) as exc:
            warnings.append(f"{clusters_path}:{lineno}: skipped cluster row: {exc}")
            continue
        if record.prevalence_year not in record.pfpr_by_year:
            warnings.append(
                f"{clusters_path}:{lineno}: cluster {record.cluster_id} has no "
                f"prevalence estimate for its assigned year {record.prevalence_year}"
            )
        clusters.append(record)
    return clusters, warnings


def read_births(path) -> Tuple[List[BirthRecord], List[str]]:
    births: List[BirthRecord] = []
    warnings: List[str] = []
    for lineno, row in _read_table(path, BIRTH_COLUMNS):
        try:
            size = row["reported_size"]
            lbw = row["lbw"]
            births.append(BirthRecord(
                child_id=row["child_id"],
                cluster_id=row["cluster_id"],
                mother_age_years=int(row["mother_age_years"]),
                birth_order_code=int(row["birth_order_code"]),
                wealth_index=int(row["wealth_index"]),
                urban=int(row["urban"]),
                mother_education=int(row["mother_education"]),
                child_is_boy=int(row["child_is_boy"]),
                married=int(row["married"]),
                antenatal=int(row["antenatal"]),
                reported_size=None if size == "" else BirthSize(size),
                multiple_birth=int(row["multiple_birth"]),
                child_age_years=int(row["child_age_years"]),
                lbw=None if lbw == "" else int(lbw),
            ))
        except (ValueError, KeyError, DataValidationError) as exc:
            warnings.append(f"{path}:{lineno}: skipped birth row: {exc}")
    return births, warnings


# ---------------------------------------------------------------------------
# CSV writing (the same schemas, so records round-trip losslessly)


def write_clusters_csv(clusters: Sequence[ClusterRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CLUSTER_COLUMNS)
        for c in clusters:
            writer.writerow([
                c.cluster_id, c.country, c.survey_year, c.role.value,
                fmt(c.location.latitude_deg), fmt(c.location.longitude_deg),
                fmt(c.covariates["urban"]), fmt(c.covariates["electricity"]),
                fmt(c.covariates["floor"]), fmt(c.covariates["toilet"]),
                fmt(c.covariates["mother_education"]),
                fmt(c.covariates["contraception"]),
            ])


def write_prevalence_csv(clusters: Sequence[ClusterRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREVALENCE_COLUMNS)
        for c in clusters:
            for year in sorted(c.pfpr_by_year):
                writer.writerow([c.cluster_id, year, fmt(c.pfpr_by_year[year])])


def write_births_csv(births: Sequence[BirthRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(BIRTH_COLUMNS)
        for b in births:
            writer.writerow([
                b.child_id, b.cluster_id, b.mother_age_years, b.birth_order_code,
                b.wealth_index, b.urban, b.mother_education, b.child_is_boy,
                b.married, b.antenatal,
                "" if b.reported_size is None else b.reported_size.value,
                b.multiple_birth, b.child_age_years,
                "" if b.lbw is None else b.lbw,
            ])
