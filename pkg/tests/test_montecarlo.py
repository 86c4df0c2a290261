import numpy as np
import pytest

from crdsa.cache import cache_load, cache_path, cache_store, cached_plr_curve
from crdsa.errors import CacheIntegrityError, KernelMissingError, SizeGuardError
from crdsa.montecarlo import (
    PlrCurve,
    Scenario,
    estimate_plr,
    estimate_plr_curve,
    estimate_q_table,
    _samples,
    exact_q_small,
    stream_seed,
)
from crdsa.sic import DegreeLaw


def test_lone_packet_never_lost():
    plr, se = estimate_plr(1, 100, DegreeLaw.constant(2), 20, 1000, 0)
    assert plr == 0.0 and se == 0.0


@pytest.mark.parametrize("n", [2, 10, 60, 150])
def test_sa_plr_matches_collision_formula(n):
    plr, se = estimate_plr(n, 100, DegreeLaw.constant(1), 20, 20000, 5)
    exact = 1 - (1 - 1 / 100) ** (n - 1)
    assert abs(plr - exact) < 3.5 * max(se, 1e-12)


def test_exact_q_small_examples():
    np.testing.assert_allclose(exact_q_small(3, 2, 2), [1 / 3, 0, 2 / 3])
    np.testing.assert_allclose(exact_q_small(2, 1, 2), [1 / 2, 0, 1 / 2])
    for n_slots in (1, 3, 5):
        np.testing.assert_allclose(exact_q_small(n_slots, 1, 1), [0, 1])
    with pytest.raises(SizeGuardError):
        exact_q_small(5, 2, 7)


def test_q_table_trivial_columns():
    q = estimate_q_table(Scenario(2, DegreeLaw.constant(2), 20), 3, 2000, seed=4)
    assert q.q[0, 0] == 1.0 and q.q[1, 1] == 1.0
    assert q.q[0, 2] == 1.0
    assert np.all(np.triu(q.q, 1)[np.tril_indices(4)] == 0)  # nothing below-diagonal leaks in
    assert np.all(q.q[np.tril_indices(4, -1)] == 0)


SMALL = [(3, 2, 2), (3, 2, 3), (4, 2, 3), (4, 2, 4), (4, 3, 4), (5, 2, 4), (4, 1, 4), (5, 3, 4)]


@pytest.mark.parametrize("n_slots,d,n", SMALL)
def test_q_table_matches_exact_enumeration(n_slots, d, n):
    exact = exact_q_small(n_slots, d, n)
    table = estimate_q_table(Scenario(n_slots, DegreeLaw.constant(d), 20), n, 100_000, seed=7)
    col = table.column(n)
    sigma = np.sqrt(exact * (1 - exact) / 100_000)
    assert np.all(np.abs(col - exact) <= 4 * sigma + 1e-12)
    assert col.sum() == pytest.approx(1.0, abs=1e-12)


def test_kernels_agree_on_plr():
    sc = Scenario(100, DegreeLaw.constant(2), 20)
    table = estimate_q_table(sc, 60, 20000, seed=3)
    for n in (20, 45, 60):
        plr, se = estimate_plr(n, 100, sc.degree_law, 20, 20000, 99)
        se_q = np.sqrt(np.sum((np.arange(n + 1) / n) ** 2 * table.column(n)) - (1 - table.plr(n)) ** 2) / np.sqrt(20000)
        assert abs(table.plr(n) - plr) < 4 * np.hypot(se, se_q) + 1e-9


def test_determinism_and_order_independence():
    sc = Scenario(100, DegreeLaw.constant(3), 20)
    a = estimate_plr_curve(sc, [0.3, 0.6, 0.9], 500, seed=12)
    b = estimate_plr_curve(sc, [0.3, 0.6, 0.9], 500, seed=12)
    c = estimate_plr_curve(sc, [0.6], 500, seed=12)
    assert a == b
    assert c.plr[0] == a.plr[1]
    assert estimate_q_table(sc, 20, 300, 5) == estimate_q_table(sc, 20, 300, 5)


def test_parallel_workers_give_identical_curve():
    sc = Scenario(50, DegreeLaw.constant(2), 20)
    grid = [0.2, 0.4, 0.6, 0.8]
    assert estimate_plr_curve(sc, grid, 400, 2, workers=2) == estimate_plr_curve(sc, grid, 400, 2, workers=1)


def test_empty_grid_and_interpolation():
    sc = Scenario(100, DegreeLaw.constant(2), 20)
    empty = estimate_plr_curve(sc, [], 10, 1)
    assert empty.g_in.size == 0
    curve = estimate_plr_curve(sc, [0.01, 0.5, 1.0], 2000, 1)
    assert curve.plr[0] == 0.0
    assert curve.plr_at(0.0) == 0.0
    g = np.linspace(0, 1.2, 50)
    assert np.all(np.diff(curve.plr_at(g)) >= 0)


def test_monotone_fit_respects_noise():
    # losses cluster within a frame (a deadlock takes at least two packets), so the
    # noise yardstick is the frame-level standard error of the loss fraction
    law = DegreeLaw.constant(2)
    runs = 3000
    ns = np.arange(1, 121)
    plr, se = [], []
    for n in ns:
        counts = _samples(int(n), 100, law, 20, runs, stream_seed(8, 0, int(n)))
        frac = 1.0 - counts / n
        plr.append(frac.mean())
        se.append(frac.std() / np.sqrt(runs))
    plr, se = np.array(plr), np.array(se)
    curve = estimate_plr_curve(Scenario(100, law, 20), ns / 100, runs, 8)
    np.testing.assert_allclose(curve.plr, plr, atol=1e-12)
    assert np.all(np.diff(curve.monotone_plr()) >= 0)
    drops = plr[:-1] - plr[1:]
    assert np.all(drops <= 2 * np.hypot(se[:-1], se[1:]) + 1e-12)


def test_crdsa_curve_shapes():
    grid = [0.3, 0.5, 0.55, 0.6, 1.0]
    two = estimate_plr_curve(Scenario(100, DegreeLaw.constant(2), 20), grid, 3000, 1)
    three = estimate_plr_curve(Scenario(100, DegreeLaw.constant(3), 20), [0.5], 3000, 1)
    thr = np.asarray(grid) * (1 - two.plr)
    assert thr.max() > 0.45 > 0.36
    assert 0.5 * (1 - three.plr[0]) == pytest.approx(0.5, abs=0.005)


def test_cache_round_trip(tmp_path):
    sc = Scenario(100, DegreeLaw.distribution([0.5, 0.25, 0.25]), 20)
    curve = estimate_plr_curve(sc, [0.1, 0.37, 0.9], [300, 200, 100], 4)
    table = estimate_q_table(sc, 12, 250, 4)
    for kernel in (curve, table):
        path = cache_store(tmp_path, kernel)
        loaded = cache_load(tmp_path, kernel.key())
        assert loaded == kernel
        assert path == cache_path(tmp_path, kernel.key())
    assert np.array_equal(cache_load(tmp_path, table.key()).n_runs, table.n_runs)


def test_cache_missing_and_damaged(tmp_path):
    sc = Scenario(100, DegreeLaw.constant(2), 20)
    curve = estimate_plr_curve(sc, [0.2, 0.4], 100, 4)
    other = estimate_plr_curve(sc, [0.2, 0.4], 100, 5)
    path = cache_store(tmp_path, curve)
    with pytest.raises(KernelMissingError):
        cache_load(tmp_path, other.key())
    text = path.read_text()
    path.write_text(text[: len(text) - 10])
    with pytest.raises(CacheIntegrityError):
        cache_load(tmp_path, curve.key())
    path.write_text("garbage\n")
    with pytest.raises(CacheIntegrityError):
        cache_load(tmp_path, curve.key())


def test_cached_getter_hits_second_time(tmp_path):
    sc = Scenario(100, DegreeLaw.constant(2), 20)
    a, hit_a = cached_plr_curve(tmp_path, sc, [0.2, 0.4], 100, 3)
    b, hit_b = cached_plr_curve(tmp_path, sc, [0.2, 0.4], 100, 3)
    assert (hit_a, hit_b) == (False, True) and a == b
    with pytest.raises(KernelMissingError):
        cached_plr_curve(tmp_path, sc, [0.2, 0.4], 100, 4, compute=False)


def test_plr_curve_rejects_unsorted_grid():
    with pytest.raises(ValueError):
        PlrCurve(100, DegreeLaw.constant(2), 20, 1, [0.2, 0.1], [0, 0], [1, 1], [0, 0])
