import numpy as np
import pytest

from crdsa.closedloop import (
    LoopState,
    PolicyConfig,
    ScenarioConfig,
    advance,
    measure_fet,
    run,
    step,
    sweep_threshold,
)
from crdsa.errors import InvalidConfigurationError
from crdsa.sic import DegreeLaw

D2 = DegreeLaw.constant(2)
D3 = DegreeLaw.constant(3)
STABLE = ScenarioConfig(degree_law=D2, M=350, p0=0.143, p_r=0.5)
SEVENTH = ScenarioConfig(degree_law=D3, M=250, p0=0.2, p_r=1.0)


def batch_sigma(x, batches=50):
    x = np.asarray(x, dtype=float)
    n = x.size // batches * batches
    means = x[:n].reshape(batches, -1).mean(axis=1)
    return means.std(ddof=1) / np.sqrt(batches)


@pytest.mark.parametrize("f_d", [0, 3])
def test_population_conserved(f_d):
    st = run(STABLE, PolicyConfig(feedback_delay=f_d), 20_000, 100, seed=4)
    tr = st.trace
    assert np.all(tr["thinking"] + tr["backlogged"] + tr["in_flight"] == 350)
    if f_d == 0:
        assert np.all(tr["in_flight"] == 0)
        assert np.array_equal(tr["backlog"], tr["backlogged"])


def test_summary_ranges():
    st = run(STABLE, PolicyConfig("icp", 5), 20_000, 100, seed=4)
    assert 0 <= st.throughput <= 1 and 0 <= st.critical_time_fraction <= 1
    assert st.delay_hist[0] == 0 and st.mean_delay >= 1
    assert st.rejected_count > 0


def test_rcp_without_backoff_is_no_policy():
    base = run(SEVENTH, PolicyConfig(), 30_000, 100, seed=9)
    same = run(SEVENTH, PolicyConfig("rcp", 10, 1.0), 30_000, 100, seed=9)
    for name in ("backlog", "transmitted", "decoded", "fresh"):
        assert np.array_equal(base.trace[name], same.trace[name])
    with pytest.raises(InvalidConfigurationError):
        PolicyConfig("rcp", 10, 1.0).check_against(SEVENTH)


def test_unreachable_threshold_matches_uncontrolled():
    base = run(STABLE, PolicyConfig(), 30_000, 100, seed=2)
    for kind, p_c in (("icp", None), ("rcp", 0.1)):
        st = run(STABLE, PolicyConfig(kind, 10**6, p_c), 30_000, 100, seed=2)
        assert np.array_equal(base.trace["backlog"], st.trace["backlog"])
        assert st.critical_time_fraction == 0.0 and st.rejected_count == 0


def test_icp_blocks_arrivals_above_threshold():
    n_hat = 3
    st = run(SEVENTH, PolicyConfig("icp", n_hat), 50_000, 0, seed=5)
    tr = st.trace
    above = tr["backlog"][:-1] > n_hat
    assert above.any()
    assert np.all(tr["fresh"][1:][above] == 0)
    assert np.all(tr["critical"][1:] == above)


def test_feedback_delay_raises_effective_threshold():
    sc = ScenarioConfig(degree_law=D3, M=None, lam=60, p_r=1.0)
    switch = {}
    for f_d in (0, 10):
        st = run(sc, PolicyConfig("icp", 15, None, f_d), 100_000, 1000, seed=3)
        crit, backlog = st.trace["critical"], st.trace["backlog"]
        on = np.flatnonzero(crit[1:] & ~crit[:-1]) + 1
        assert on.size > 10
        switch[f_d] = backlog[on - 1].mean()
    assert switch[0] > 15
    assert switch[10] > switch[0]


def test_step_without_activity():
    sc = ScenarioConfig(degree_law=D2, M=50, p0=0.0, p_r=0.5)
    loop = LoopState.empty(sc, PolicyConfig())
    before = loop.state.copy()
    out = step(loop, sc, PolicyConfig(), np.random.default_rng(0))
    assert np.array_equal(loop.state, before) and loop.frame == 1
    assert out["transmitted"] == 0 and out["backlog"] == 0


def test_step_and_advance_agree_on_bookkeeping():
    loop = LoopState.empty(STABLE, PolicyConfig())
    rng = np.random.default_rng(1)
    for _ in range(200):
        out = step(loop, STABLE, PolicyConfig(), rng)
    assert loop.backlog == out["backlog"]
    assert sum(loop.user_counts()) == 350


def test_overloaded_channel_collapses():
    sc = ScenarioConfig(degree_law=D2, M=350, p0=0.18, p_r=1.0)
    st = run(sc, PolicyConfig(), 30_000, 5000, seed=1)
    assert st.mean_backlog == pytest.approx(346, abs=3)
    assert st.throughput == pytest.approx(6e-3, abs=2e-3)


def test_rcp_three_replicas_at_unstable_point():
    st = run(SEVENTH, PolicyConfig("rcp", 42, 0.53), 200_000, 1000, seed=6)
    assert st.throughput == pytest.approx(0.5, rel=0.05)


def test_stable_channel_throughput():
    st = run(STABLE, PolicyConfig(), 200_000, 1000, seed=7)
    assert st.throughput == pytest.approx(0.49, rel=0.05)


@pytest.mark.xfail(strict=True, reason="time-averaged backlog sits above the fluid operating point; see decisions ledger")
def test_stable_channel_mean_backlog():
    st = run(STABLE, PolicyConfig(), 200_000, 1000, seed=7)
    assert st.mean_backlog == pytest.approx(8.2, rel=0.05)


def test_slotted_aloha_reference():
    sc = ScenarioConfig(degree_law=DegreeLaw.constant(1), M=250, p0=0.2, p_r=1.0)
    st = run(sc, PolicyConfig(), 200_000, 1000, seed=8)
    assert st.throughput == pytest.approx(0.369, rel=0.05)
    assert st.little_delay == pytest.approx(1.76, rel=0.05)


def test_balance_equations_hold_on_average():
    st = run(STABLE, PolicyConfig(), 200_000, 1000, seed=10)
    tr = {k: v[1000:] for k, v in st.trace.items()}
    n_s, p_r = 100, 0.5
    tx, dec, fresh, bl = (tr[k].astype(float) for k in ("transmitted", "decoded", "fresh", "backlog"))
    g_in = tx.mean() / n_s
    plr = 1 - dec.mean() / tx.mean()
    # fresh input equals throughput
    r1 = fresh - dec
    assert abs(r1.mean()) < 3 * batch_sigma(r1)
    assert fresh.mean() / n_s == pytest.approx(g_in * (1 - plr), abs=3 * batch_sigma(r1) / n_s)
    # failures per frame equal the expected retransmissions p_r * N_B
    r2 = (tx - dec) - p_r * bl
    assert abs(r2.mean()) < 3 * batch_sigma(r2)


def test_warmup_insensitive():
    a = run(STABLE, PolicyConfig(), 150_000, 1000, seed=12)
    b = run(STABLE, PolicyConfig(), 150_000, 2000, seed=12)
    sigma = batch_sigma(a.trace["decoded"][1000:]) / 100
    assert abs(a.throughput - b.throughput) < 3 * sigma


def test_sweep_rows():
    rows = sweep_threshold(SEVENTH, PolicyConfig("icp", 1), [5, 40], 20_000, 500, seed=1)
    assert [r.n_hat for r in rows] == [5, 40]
    assert rows[0].critical_time_fraction >= rows[1].critical_time_fraction
    with pytest.raises(InvalidConfigurationError):
        sweep_threshold(SEVENTH, PolicyConfig("icp", 1), [], 100)


def test_measure_fet_stable_has_no_exits():
    res = measure_fet(STABLE, 200_000, seed=1, exit_level=120)
    assert res.samples == () and res.censored_frames == 200_000


def test_measure_fet_unstable_small_population():
    sc = ScenarioConfig(n_slots=20, degree_law=D2, M=60, p0=0.2, p_r=1.0)
    res = measure_fet(sc, 100_000, seed=2, exit_level=6, confirm_level=30)
    assert len(res.samples) > 10 and min(res.samples) >= 1
    cdf = res.cdf([0, res.mean, 10**9])
    assert cdf[0] == 0.0 and cdf[-1] == 1.0
    with pytest.raises(InvalidConfigurationError):
        measure_fet(sc, 100, seed=1, exit_level=6, confirm_level=5)


def test_infinite_population_accounting():
    sc = ScenarioConfig(degree_law=D2, M=None, lam=30, p_r=0.5)
    loop = LoopState.empty(sc, PolicyConfig(feedback_delay=2))
    tr = advance(loop, sc, PolicyConfig(feedback_delay=2), 5000, seed=3)
    pending = int(loop.scalars[1])
    assert tr["fresh"].sum() - tr["decoded"].sum() == pending
    assert loop.backlog <= pending


def test_policy_validation():
    with pytest.raises(InvalidConfigurationError):
        PolicyConfig("rcp", 10)
    with pytest.raises(InvalidConfigurationError):
        PolicyConfig("icp", 10, 0.3)
    with pytest.raises(InvalidConfigurationError):
        PolicyConfig("lottery", 10)
    with pytest.raises(InvalidConfigurationError):
        PolicyConfig("rcp", 10, 0.6).check_against(ScenarioConfig(p_r=0.5))
    with pytest.raises(InvalidConfigurationError):
        run(STABLE, PolicyConfig(), 10, 10)
