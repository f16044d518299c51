import numpy as np
import pytest

from oracles import linear_oracle
from plapschwarz.decomposition import Obstacle, build_decomposition
from plapschwarz.fem import ProblemData
from plapschwarz.mesh import FeFunction, build_mesh_pair
from plapschwarz.schwarz import (
    CSV_HEADER,
    ERROR_FLOOR,
    ConvergenceRecord,
    SchwarzConfig,
    SchwarzError,
    cached_reference,
    estimate_rate,
    read_csv,
    run_asm,
    sublinear_bound,
    theoretical_rate,
    write_csv,
)


@pytest.fixture(scope="module")
def small():
    pair = build_mesh_pair(2, 8)
    return pair, build_decomposition(pair, 1)


def _cfg(small, p=4.0, **kw):
    pair, dec = small
    return SchwarzConfig(ProblemData(p, 1.0), pair, dec, **kw)


def test_quadratic_limit_is_linear_solve(small):
    # energy error is quadratic in the nodal error, so run well past the floor
    rec = run_asm(_cfg(small, p=2.0, outer_iters=150, stop_at_floor=False))
    exact = linear_oracle(small[0].fine)
    assert np.max(np.abs(rec.final.coeffs - exact)) <= 1e-6


def test_fixed_point(small):
    cfg = _cfg(small, outer_iters=1)
    ref = cached_reference(cfg.data, small[0].fine, budget=20000)
    cfg = _cfg(small, outer_iters=3, u0=ref[0], stop_at_floor=False)
    rec = run_asm(cfg, reference=ref)
    assert np.max(np.abs(rec.final.coeffs - ref[0].coeffs)) <= 1e-8
    assert np.all(np.abs(rec.errors) <= 1e-10)


def test_energy_monotone_and_record(small):
    rec = run_asm(_cfg(small, outer_iters=20))
    assert np.all(np.diff(rec.energies) <= 1e-10)
    assert rec.iterations == len(rec.walltimes) - 1
    assert len(rec.subsolver_iterations) == rec.iterations
    assert all(len(row) == small[1].N + 1 for row in rec.subsolver_iterations)
    assert rec.metadata["subdomains"] == 4 and rec.metadata["colors"] == 4


def test_early_stop_at_floor(small):
    rec = run_asm(_cfg(small, p=2.0, outer_iters=200))
    assert rec.stop_reason == "error_floor"
    assert rec.errors[-1] < ERROR_FLOOR <= rec.errors[-2]


def test_zero_iterations(small):
    rec = run_asm(_cfg(small, outer_iters=0))
    assert rec.iterations == 0 and rec.fit is None


def test_bad_reference_detected(small):
    cfg = _cfg(small, outer_iters=30)
    u, info = cached_reference(cfg.data, small[0].fine, budget=3)
    with pytest.raises(SchwarzError, match="reference"):
        run_asm(cfg, reference=(u, info))


def test_config_validation(small):
    pair, dec = small
    with pytest.raises(ValueError):
        _cfg(small, tau=0.3)
    with pytest.raises(ValueError):
        _cfg(small, workers=0)
    with pytest.raises(ValueError):
        _cfg(small, obstacle=Obstacle.disk(pair.fine), u0=FeFunction.zeros(pair.fine))
    other = build_mesh_pair(2, 8)
    with pytest.raises(ValueError):
        SchwarzConfig(ProblemData(4.0), other, dec)


def test_obstacle_iterates_feasible(small):
    pair, _ = small
    ob = Obstacle.disk(pair.fine, height=0.3)
    rec = run_asm(_cfg(small, obstacle=ob, outer_iters=15))
    assert ob.is_feasible(rec.final)
    assert np.all(np.diff(rec.energies) <= 1e-10)


def test_estimate_rate_exact_geometric():
    fit = estimate_rate(0.5 ** np.arange(20.0) * 1e-2)
    assert fit.rho == pytest.approx(0.5, rel=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_estimate_rate_flat_and_short():
    fit = estimate_rate(np.full(10, 1e-3))
    assert fit.rho == 1.0 and fit.r2 == 1.0
    with pytest.raises(ValueError):
        estimate_rate([1e-2, 1e-3])
    with pytest.raises(ValueError):
        estimate_rate([1e-2, 1e-3, 1e-12, 1e-13])  # floor leaves only 2 points
    with pytest.raises(ValueError):
        estimate_rate(np.ones(5), tail_fraction=0.0)


def test_estimate_rate_ignores_floor_points():
    e = np.concatenate([0.3 ** np.arange(10.0), np.full(5, 1e-14)])
    assert estimate_rate(e).rho == pytest.approx(0.3, rel=1e-10)


def test_theoretical_rate_quadratic():
    # p = 2: 1 - 1/2 * min(1, tau * mu / C0)
    assert theoretical_rate(2.0, 0.2, 0.5, 1.0) == pytest.approx(1 - 0.5 * 0.1)
    assert theoretical_rate(2.0, 1.0, 10.0, 1.0) == pytest.approx(0.5)


@pytest.mark.parametrize("p", [1.5, 3.0, 4.0])
def test_theoretical_rate_properties(p):
    r = theoretical_rate(p, 0.2, 0.05, 0.3)
    assert 0.0 < r < 1.0
    assert theoretical_rate(p, 0.2, 0.05, 0.3, constrained=True) >= r
    # a larger stability constant can only slow the guaranteed rate
    assert theoretical_rate(p, 0.2, 0.05, 3.0) >= r
    with pytest.raises(ValueError):
        theoretical_rate(p, 0.2, 0.0, 1.0)


def test_sublinear_bound():
    # p = 4: exponent 4*1/2 = 2, so one decade in n costs two decades
    a, b = sublinear_bound([9, 99], 4.0, 0.25, 1 / 32)
    assert a / b == pytest.approx(100.0)
    assert sublinear_bound(0, 4.0, 0.25, 1 / 32) == pytest.approx(8.0**2)
    with pytest.raises(ValueError):
        sublinear_bound(3, 2.0, 0.25, 1 / 32)


def test_csv_roundtrip(tmp_path, small):
    rec = run_asm(_cfg(small, outer_iters=5))
    path = tmp_path / "run.csv"
    write_csv(rec, path, extra_meta={"seed": 7})
    meta, cols = read_csv(path)
    assert open(path).read().splitlines()[len(meta)] == ",".join(CSV_HEADER)
    assert meta["seed"] == "7" and meta["p"] == "4.0"
    np.testing.assert_array_equal(cols["energy"], rec.energies)
    np.testing.assert_array_equal(cols["energy_error"], rec.errors)
    np.testing.assert_array_equal(cols["walltime_s"], rec.walltimes)
    write_csv(rec, path, omit_timing=True)
    assert np.all(np.isnan(read_csv(path)[1]["walltime_s"]))


def test_read_csv_rejects_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(path)


def test_reference_cache(tmp_path, small):
    data = ProblemData(4.0, 1.0)
    u1, i1 = cached_reference(data, small[0].fine, budget=500, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("reference-*.npz"))) == 1
    u2, i2 = cached_reference(data, small[0].fine, budget=500, cache_dir=tmp_path)
    np.testing.assert_array_equal(u1.coeffs, u2.coeffs)
    assert i1 == i2
    cached_reference(data, small[0].fine, budget=501, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("reference-*.npz"))) == 2


def test_parallel_matches_serial(small):
    ref = cached_reference(ProblemData(4.0, 1.0), small[0].fine, budget=20000)
    a = run_asm(_cfg(small, outer_iters=10, workers=1), reference=ref)
    b = run_asm(_cfg(small, outer_iters=10, workers=3), reference=ref)
    assert a.energies.tobytes() == b.energies.tobytes()
    assert a.final.coeffs.tobytes() == b.final.coeffs.tobytes()


def test_record_properties():
    rec = ConvergenceRecord(np.array([3.0, 2.0]), 1.0, np.zeros(2))
    np.testing.assert_array_equal(rec.errors, [2.0, 1.0])
    assert rec.fitted_rate is None and rec.iterations == 1
