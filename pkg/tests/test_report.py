import math

import numpy as np

from matchdid.geomatch import haversine_km
from matchdid.model import ClusterPair, PairCategory, Role
from matchdid.report import match_diagnostics, write_match_diagnostics_csv

from conftest import make_cluster


def _pair(pid, lat_e, lon_e, lat_l, lon_l, category, pfpr_e=0.5, pfpr_l=0.15):
    early = make_cluster(f"{pid}e", survey_year=2003, role=Role.EARLY,
                         lat=lat_e, lon=lon_e,
                         pfpr={2003: pfpr_e, 2012: pfpr_l})
    late = make_cluster(f"{pid}l", survey_year=2012, role=Role.LATE,
                        lat=lat_l, lon=lon_l,
                        pfpr={2003: pfpr_e, 2012: pfpr_l})
    return ClusterPair(early=early, late=late, category=category,
                       geo_distance_km=haversine_km(early.location,
                                                    late.location))


def test_diagnostics_means_and_correlations():
    pairs = [
        _pair("a", 1.0, 10.0, 1.01, 10.01, PairCategory.HIGH_LOW),
        _pair("b", 2.0, 11.0, 2.02, 11.01, PairCategory.HIGH_LOW),
        _pair("c", 3.0, 12.0, 3.01, 12.02, PairCategory.HIGH_LOW),
        _pair("d", 5.0, 20.0, 5.01, 20.01, PairCategory.HIGH_HIGH,
              pfpr_e=0.52, pfpr_l=0.49),
    ]
    rows = {r.category: r for r in match_diagnostics(pairs)}
    hl = rows["high_low"]
    assert hl.n_pairs == 3
    expected_mean = np.mean([p.geo_distance_km for p in pairs[:3]])
    assert hl.mean_haversine_km == expected_mean
    assert hl.corr_longitude > 0.999
    assert hl.corr_latitude > 0.999
    assert hl.early_mean_latitude == np.mean([1.0, 2.0, 3.0])
    assert hl.late_mean_longitude == np.mean([10.01, 11.01, 12.02])
    # early clusters still carry a late-year rate and vice versa
    assert hl.early_mean_pfpr_early == 0.5
    assert hl.early_mean_pfpr_late == 0.15
    assert hl.late_mean_pfpr_early == 0.5
    hh = rows["high_high"]
    assert hh.n_pairs == 1
    assert math.isnan(hh.corr_longitude)   # a single pair has no spread


def test_empty_category_gives_nan_row():
    pairs = [_pair("a", 1.0, 10.0, 1.01, 10.01, PairCategory.HIGH_LOW)]
    rows = {r.category: r for r in match_diagnostics(pairs)}
    assert rows["high_high"].n_pairs == 0
    assert math.isnan(rows["high_high"].mean_haversine_km)


def test_csv_layout(tmp_path):
    pairs = [_pair("a", 1.0, 10.0, 1.01, 10.01, PairCategory.HIGH_LOW)]
    path = tmp_path / "match_diagnostics.csv"
    write_match_diagnostics_csv(match_diagnostics(pairs), path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("category,n_pairs,mean_haversine_km,")
    assert len(lines) == 3
