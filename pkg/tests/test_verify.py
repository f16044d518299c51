import numpy as np
import pytest

from plapschwarz.decomposition import build_decomposition
from plapschwarz.fem import ProblemData
from plapschwarz.mesh import build_mesh_pair
from plapschwarz.verify import (
    SampleSpec,
    c0_report,
    check_bl_inequalities,
    check_bregman_equiv,
    check_df_as_distance,
    check_scaling,
    check_symmetry,
    run_suite,
    sample_pairs,
    write_reports,
)


@pytest.fixture
def spec2(mesh8):
    return SampleSpec(mesh8, 2.0, count=100)


def test_sample_pairs_prefix_stable(mesh8):
    a = sample_pairs(SampleSpec(mesh8, 4.0, count=30, seed=3))
    b = sample_pairs(SampleSpec(mesh8, 4.0, count=60, seed=3))
    for (u1, v1), (u2, v2) in zip(a, b):
        np.testing.assert_array_equal(u1, u2)
        np.testing.assert_array_equal(v1, v2)
    c = sample_pairs(SampleSpec(mesh8, 4.0, count=30, seed=4))
    assert not np.array_equal(a[0][0], c[0][0])


def test_adversarial_pairs_present(mesh8):
    pairs = sample_pairs(SampleSpec(mesh8, 4.0, count=40))
    assert not np.any(pairs[39][1])  # zero base
    assert np.count_nonzero(pairs[19][0] - pairs[19][1]) == 1  # single hat


def test_quadratic_case_exact(spec2):
    # p = 2: Phi(v + t w, v) = t^2 Phi(v + w, v), Phi symmetric, D_F = Phi / 2
    s = check_scaling(spec2)
    assert s.passed
    assert s.estimates["phi_t_over_tpmax_min"] == pytest.approx(1.0, rel=1e-12)
    assert s.estimates["phi_t_over_tpmin_max"] == pytest.approx(1.0, rel=1e-12)
    sym = check_symmetry(spec2)
    assert sym.sample_min == pytest.approx(1.0, rel=1e-12)
    assert sym.sample_max == pytest.approx(1.0, rel=1e-12)
    b = check_bregman_equiv(spec2)
    assert b.sample_min == pytest.approx(0.5, rel=1e-12)
    assert b.sample_max == pytest.approx(0.5, rel=1e-12)
    d = check_df_as_distance(spec2)
    assert d.passed and d.estimates["C2_df"] == pytest.approx(1.0, rel=1e-12)


def test_quadratic_bl_constants():
    c1, c2 = check_bl_inequalities(2.0, samples=2000, grid=41)
    assert c1.estimates["C1"] == pytest.approx(1.0, rel=1e-12)
    assert c2.estimates["C2"] == pytest.approx(1.0, rel=1e-12)
    assert c1.passed and c2.passed


@pytest.mark.parametrize("p", [1.5, 3.0, 4.0])
def test_checks_pass(mesh8, p):
    spec = SampleSpec(mesh8, p, count=200)
    reports = [check_scaling(spec), check_symmetry(spec), check_bregman_equiv(spec),
               check_df_as_distance(spec), *check_bl_inequalities(p, samples=5000, grid=81)]
    for r in reports:
        assert r.passed, r.summary()
    assert 0 < reports[2].estimates["mu_phi_lower"] <= reports[2].estimates["L_phi_upper"] < np.inf
    assert reports[1].sample_max <= 2.0 ** abs(p - 2.0) * (1 + 1e-10)


def test_estimates_monotone_in_samples(mesh8):
    small = check_bregman_equiv(SampleSpec(mesh8, 4.0, count=100))
    large = check_bregman_equiv(SampleSpec(mesh8, 4.0, count=1000))
    assert large.sample_min <= small.sample_min
    assert large.sample_max >= small.sample_max


def test_scaled_phi_is_caught(spec2):
    # shrinking one side of an exact identity must register violations
    assert check_scaling(spec2, phi_scale=0.9).violations > 0
    assert check_symmetry(spec2, phi_scale=0.9).violations > 0


def test_bl_rejects_bad_p():
    with pytest.raises(ValueError):
        check_bl_inequalities(1.0)


def test_run_suite_and_csv(tmp_path):
    reports = run_suite(3.0, m=4, samples=20, bl_samples=500)
    assert {r.check for r in reports} == {"scaling", "symmetry", "bregman_equiv", "bl_upper",
                                          "bl_lower", "df_distance"}
    path = tmp_path / "v.csv"
    write_reports(reports, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "check,name,value,samples,violations,seed"
    assert len(lines) == 1 + sum(len(r.rows()) for r in reports)
    assert all(r.summary() for r in reports)


def test_c0_report():
    dec = build_decomposition(build_mesh_pair(2, 8), 1)
    r = c0_report(dec, ProblemData(4.0), samples=10)
    assert r.passed and r.estimates["C0"] > 0
