import math

import numpy as np
import pytest

from matchdid.errors import DataValidationError
from matchdid.infer import REGRESSORS, run_primary_analysis
from matchdid.sensan import (
    case_label,
    default_grid,
    gen_u,
    sensitivity_fit,
    sensitivity_grid,
    u_probability,
    write_sensitivity_csv,
)
from matchdid._util import substream


class TestGenU:
    def test_probability_arithmetic(self):
        assert u_probability(1, 0, 10.0, 0.0) == pytest.approx(0.6, abs=1e-15)
        assert u_probability(0, 1, 10.0, 5.0) == pytest.approx(0.55, abs=1e-15)
        assert u_probability(1, 1, 10.0, 5.0) == pytest.approx(0.65, abs=1e-15)
        assert u_probability(0, 0, 10.0, 5.0) == 0.5

    def test_pure_noise_mean(self):
        n = 100_000
        rng = substream(0, "test-u")
        u = gen_u(np.zeros(n), np.zeros(n), 0.0, 0.0, rng)
        sd = math.sqrt(0.25 / n)
        assert abs(u.mean() - 0.5) < 3 * sd

    def test_shifted_mean(self):
        n = 100_000
        rng = substream(1, "test-u")
        u = gen_u(np.ones(n), np.zeros(n), 10.0, 5.0, rng)
        sd = math.sqrt(0.6 * 0.4 / n)
        assert abs(u.mean() - 0.6) < 3 * sd

    def test_invalid_parameters_fail_before_draws(self):
        rng = substream(2, "test-u")
        with pytest.raises(DataValidationError):
            gen_u(np.ones(10), np.ones(10), 30.0, 30.0, rng)
        # the generator was never advanced
        probe = substream(2, "test-u")
        assert rng.random() == probe.random()

    def test_misaligned_vectors(self):
        with pytest.raises(DataValidationError):
            gen_u(np.ones(3), np.ones(4), 0.0, 0.0, substream(3))


class TestCaseLabel:
    @pytest.mark.parametrize("p1,p2,case", [
        (5, 5, 1), (5, -5, 2), (-5, 5, 3), (-5, -5, 4), (0, 5, 0), (5, 0, 0),
    ])
    def test_labels(self, p1, p2, case):
        assert case_label(p1, p2) == case


class TestSensitivityFit:
    def test_null_parameters_agree_with_primary(self, analysis):
        design, _, sets = analysis
        primary = run_primary_analysis(design, sets)
        res = sensitivity_fit(design, sets, 0.0, 0.0, seed=42)
        k1p = primary.pooled["low_prevalence"]
        se = math.sqrt(k1p.total_var)
        assert abs(res.k1.estimate - k1p.estimate) < 3 * se

    def test_lambda_reported_and_tracks_p2(self, analysis):
        design, _, sets = analysis
        pos = sensitivity_fit(design, sets, 5.0, 20.0, seed=1)
        neg = sensitivity_fit(design, sets, 5.0, -20.0, seed=1)
        assert pos.lam.estimate > neg.lam.estimate
        assert math.isfinite(pos.lam.p_value)

    def test_deterministic_under_seed(self, analysis):
        design, _, sets = analysis
        a = sensitivity_fit(design, sets, 5.0, 5.0, seed=7)
        b = sensitivity_fit(design, sets, 5.0, 5.0, seed=7)
        assert a.k1.estimate == b.k1.estimate
        assert a.k1.total_var == b.k1.total_var
        c = sensitivity_fit(design, sets, 5.0, 5.0, seed=8)
        assert c.k1.estimate != a.k1.estimate

    def test_monotone_in_p2_with_case_directionality(self, analysis):
        design, _, sets = analysis
        p2_grid = (-20.0, -10.0, 10.0, 20.0)
        up = [sensitivity_fit(design, sets, 20.0, p2, seed=99).k1.estimate
              for p2 in p2_grid]
        assert all(b < a for a, b in zip(up, up[1:]))      # decreasing in p2
        down = [sensitivity_fit(design, sets, -20.0, p2, seed=99).k1.estimate
                for p2 in p2_grid]
        assert all(b > a for a, b in zip(down, down[1:]))  # increasing in p2


class TestGrid:
    def test_default_grid_has_32_points_in_4_cases(self):
        grid = default_grid()
        assert len(grid) == 32
        cases = [case_label(p1, p2) for p1, p2 in grid]
        for case in (1, 2, 3, 4):
            assert cases.count(case) == 8

    def test_no_confounder_consistency_on_default_grid(self, analysis):
        design, _, sets = analysis
        primary = run_primary_analysis(design, sets)
        k1p = primary.pooled["low_prevalence"]
        se = math.sqrt(k1p.total_var)
        rows = sensitivity_grid(design, sets, seed=31)
        assert len(rows) == 32
        for row in rows:
            assert not row.skipped
            assert abs(row.estimate - k1p.estimate) < 3 * se

    def test_zero_point_reproduces_primary(self, analysis):
        design, _, sets = analysis
        primary = run_primary_analysis(design, sets)
        rows = sensitivity_grid(design, sets, seed=3, grid=[(0.0, 0.0)])
        k1p = primary.pooled["low_prevalence"]
        assert abs(rows[0].estimate - k1p.estimate) < 3 * math.sqrt(k1p.total_var)

    def test_invalid_point_skipped_with_note(self, analysis, tmp_path):
        design, _, sets = analysis
        rows = sensitivity_grid(design, sets, seed=3,
                                grid=[(60.0, 60.0), (0.0, 0.0)])
        assert rows[0].skipped and "outside [0, 1]" in rows[0].note
        assert not rows[1].skipped
        path = tmp_path / "sensitivity.csv"
        write_sensitivity_csv(rows, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "case,p1,p2,estimate,ci_low,ci_high,p_value,note"
        assert "skipped" in lines[1]

    def test_grid_deterministic(self, analysis):
        design, _, sets = analysis
        small = [(2.5, 5.0), (-2.5, -5.0)]
        a = sensitivity_grid(design, sets, seed=17, grid=small)
        b = sensitivity_grid(design, sets, seed=17, grid=small)
        assert [(r.estimate, r.ci_low, r.ci_high) for r in a] == \
               [(r.estimate, r.ci_low, r.ci_high) for r in b]
