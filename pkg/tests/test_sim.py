import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from statsmodels.stats.proportion import proportion_confint

from snc_noma.channel import ConfigError, LinkBudget, Role, SinrModel, SystemConfig, noise_power
from snc_noma.sim import (InsufficientSamples, PacketRecord, PacketTrace, TailEstimate,
                          _fcfs, estimate_savp, estimate_sdvp, merge_estimates, process_aoi_tail,
                          run_campaign, run_replication, simulate_queue, wilson_upper)
from snc_noma.snc import build_models, success_probability

CFG = SystemConfig()
S2 = noise_power(CFG)


def budgets(snr_su=4.0, snr_wu=1.5):
    """Budgets giving the stated mean SNRs at 1 W."""
    return (LinkBudget(Role.SU, snr_su * S2), LinkBudget(Role.WU, snr_wu * S2))


def never_fail(g):
    return np.zeros_like(g)


def test_single_packet_deterministic():
    tr = simulate_queue(np.array([0.37e-3]), lambda m: np.ones(m, bool), 1e-4, warmup_packets=0)
    assert tr.attempts[0] == 1
    assert tr.wait()[0] == 0
    assert tr.delay()[0] == pytest.approx(1e-4)
    assert math.isnan(tr.prev_arrival[0])


def test_zero_arrival_rate():
    cfg = SystemConfig(arrival_rate_bps=0.0)
    traces = run_replication(cfg, budgets(), (1.0, 1.0), 1000, seed=0)
    assert all(len(t) == 0 for t in traces.values())


def test_lindley_and_record_invariants():
    traces = run_replication(CFG, budgets(), (1.0, 1.0), 20_000, seed=9, warmup_packets=0)
    for tr in traces.values():
        prev_dep = np.concatenate(([-np.inf], tr.departure[:-1]))
        assert np.allclose(tr.service_start, np.maximum(tr.arrival, prev_dep), rtol=0, atol=1e-12)
        assert np.all(tr.arrival <= tr.service_start)
        assert np.all(tr.service_start < tr.departure)
        assert np.all(tr.attempts >= 1)
        assert np.all(tr.delay() >= tr.attempts * CFG.attempt_duration_s - 1e-12)
        assert np.all(np.diff(tr.arrival) >= 0)


def test_fcfs_against_loop():
    rng = np.random.default_rng(0)
    a = np.sort(rng.uniform(0, 1, 500))
    s = rng.integers(1, 5, 500) * 1e-3
    dep, start = _fcfs(a, s)
    d_prev = -np.inf
    for i in range(a.size):
        st_i = max(a[i], d_prev)
        d_prev = st_i + s[i]
        assert start[i] == pytest.approx(st_i, abs=1e-12)
        assert dep[i] == pytest.approx(d_prev, abs=1e-12)


@pytest.mark.criterion(4)
def test_md1_pollaczek_khinchine():
    tau = CFG.attempt_duration_s
    rho = 0.5
    cfg = SystemConfig(arrival_rate_bps=rho / tau * CFG.ps_bits)
    lam_slot = cfg.packet_rate_hz * cfg.slot_s
    horizon = int((1_000_000 + 10_000) / lam_slot) + 10
    tr = run_replication(cfg, budgets(), (1.0, 1.0), horizon, seed=21, error_fn=never_fail)[Role.WU]
    assert len(tr) >= 1_000_000
    assert np.all(tr.attempts == 1)
    pk = rho * tau / (2 * (1 - rho))
    assert tr.wait().mean() == pytest.approx(pk, rel=0.02)


def test_warmup_split_half():
    tr = run_replication(CFG, budgets(), (1.0, 1.0), 300_000, seed=2)[Role.WU]
    d = tr.delay()
    h = d.size // 2
    a, b = d[:h], d[h:]
    se = math.sqrt(a.var() / a.size + b.var() / b.size)
    assert abs(a.mean() - b.mean()) < 4 * se


def test_attempts_match_mean_error():
    traces = run_replication(CFG, budgets(), (1.0, 1.0), 200_000, seed=6)
    for role, model in ((Role.WU, SinrModel(Role.WU, 1.5)), (Role.SU, SinrModel(Role.SU, 4.0, 1.5 / 4.0))):
        q = success_probability(build_models(CFG, model)[1])
        att = traces[role].attempts
        se = att.std() / math.sqrt(att.size)
        assert att.mean() == pytest.approx(1 / q, abs=4 * se)


def test_interference_sensitivity():
    means = []
    for p_w in (0.5, 1.0, 2.0):
        att = run_replication(CFG, budgets(), (p_w, 1.0), 100_000, seed=8)[Role.SU].attempts
        means.append((att.mean(), att.std() / math.sqrt(att.size)))
    for (m1, s1), (m2, s2) in zip(means, means[1:]):
        assert m2 - m1 > 3 * math.hypot(s1, s2)


def test_config_error_no_attempt():
    with pytest.raises(ConfigError):
        SystemConfig(cus_per_packet=2001)


# -- estimators ---------------------------------------------------------------

def _trace(arrivals, departures):
    a = np.asarray(arrivals, float)
    d = np.asarray(departures, float)
    prev = np.concatenate(([np.nan], a[:-1]))
    return PacketTrace(a, a.copy(), d, np.ones(a.size, np.int64), prev)


def test_estimate_sdvp_examples():
    tr = _trace([0, 10, 20, 30], [1, 12, 23, 34])
    assert estimate_sdvp(tr, 2.5, min_samples=1).p_hat == 0.5
    assert estimate_sdvp(tr, 0.0, min_samples=1).p_hat == 1.0
    assert estimate_sdvp(tr, math.inf, min_samples=1).p_hat == 0.0
    with pytest.raises(InsufficientSamples):
        estimate_sdvp(tr, 1.0)


def test_estimate_savp_examples():
    # packet 0 has no predecessor; residencies {1, 1}, gaps {1, 3}
    recs = [PacketRecord(0.0, 0.0, 0.5, 1, math.nan),
            PacketRecord(1.0, 1.0, 2.0, 1, 0.0),
            PacketRecord(4.0, 4.0, 5.0, 1, 1.0)]
    est = estimate_savp(recs, 2.5, min_samples=1)
    assert (est.count_exceed, est.count_total) == (1, 2)
    assert est.p_hat == 0.5
    assert estimate_savp(recs, 0.0, min_samples=1).p_hat == 1.0


def test_process_aoi_example():
    # departures 1, 4, 5; age runs 1 -> 4 (from arrival 0), then 1 -> 2 (from arrival 3)
    tr = _trace([0, 3, 4], [1, 4, 5])
    assert process_aoi_tail(tr, 2.5) == pytest.approx(1.5 / 4)
    assert process_aoi_tail(tr, 0.0) == 1.0
    assert process_aoi_tail(tr, 10.0) == 0.0


def test_process_aoi_random_times():
    tr = run_replication(CFG, budgets(), (1.0, 1.0), 100_000, seed=4)[Role.WU]
    rng = np.random.default_rng(5)
    t = rng.uniform(tr.departure[0], tr.departure[-1], 400_000)
    last = np.searchsorted(tr.departure, t, side="right") - 1
    age = t - tr.arrival[last]
    for d in (2e-3, 3e-3, 4e-3):
        p = np.mean(age > d)
        se = math.sqrt(p * (1 - p) / t.size)
        assert process_aoi_tail(tr, d) == pytest.approx(p, abs=4 * se + 1e-6)


def test_records_roundtrip():
    tr = run_replication(CFG, budgets(), (1.0, 1.0), 200, seed=1, warmup_packets=0)[Role.SU]
    back = PacketTrace.from_records(tr.records())
    assert np.array_equal(back.departure, tr.departure)
    assert np.array_equal(back.attempts, tr.attempts)


@given(st.integers(0, 2000), st.integers(1, 2000))
def test_wilson_oracle(k, extra):
    n = k + extra
    want = proportion_confint(k, n, alpha=0.05, method="wilson")[1]
    assert wilson_upper(k, n) == pytest.approx(want, rel=1e-9, abs=1e-15)
    assert wilson_upper(k, n) >= k / n


def test_merge_counts():
    m = merge_estimates([TailEstimate(1e-3, 3, 100_000), TailEstimate(1e-3, 5, 100_000)])
    assert (m.count_exceed, m.count_total) == (8, 200_000)
    with pytest.raises(ValueError):
        merge_estimates([TailEstimate(1e-3, 3, 10), TailEstimate(2e-3, 5, 10)])


def _campaign(workers, n=400_000, per=100_000, seed=30):
    return run_campaign(CFG, budgets(), (1.0, 1.0), n, workers, seed,
                        [4e-4, 6e-4, 8e-4, 1e-3], [2.5e-3, 3e-3, 4e-3],
                        packets_per_replication=per)


def test_campaign_determinism_across_workers():
    one, many = _campaign(1), _campaign(8)
    assert one.replications == 4
    assert one.rows() == many.rows()


def test_campaign_matches_monolithic():
    split = _campaign(1)
    mono = _campaign(1, per=400_000)
    for key, ests in split.estimates.items():
        for a, b in zip(ests, mono.estimates[key]):
            width = wilson_upper(b.count_exceed, b.count_total) - b.p_hat
            assert abs(a.p_hat - b.p_hat) <= 3 * max(width, 1.0 / b.count_total)


def test_sweeps_non_increasing():
    camp = _campaign(1)
    for ests in camp.estimates.values():
        counts = [e.count_exceed for e in ests]
        assert counts == sorted(counts, reverse=True)


def test_campaign_rows_schema():
    row = _campaign(1, n=100_000).rows()[0]
    assert list(row) == ["role", "threshold_s", "metric", "count_exceed", "count_total", "p_hat",
                         "wilson_hi", "seed"]


def test_lattice_delays_are_ties():
    # idle-server packets late in a long run: delay is 4 attempts up to rounding
    a = np.array([5000.0 + 0.123456789, 7000.0 + 0.987654321])
    tr = PacketTrace(a, a.copy(), a + 4e-4, np.full(2, 4), np.array([np.nan, a[0]]))
    assert estimate_sdvp(tr, 4e-4, min_samples=1).count_exceed == 0
    assert estimate_sdvp(tr, 3e-4, min_samples=1).count_exceed == 2
