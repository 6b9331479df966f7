import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from snc_noma.channel import (ConfigError, FbcCode, LinkBudget, OddCount, Role, SinrModel,
                              SystemConfig, capacity, dispersion, draw_link_budget, fbc_error,
                              large_scale_gain, noise_power, pair_ues, qfunc, sinr_model,
                              sinr_pdf, sinr_su, sinr_wu, su_sinr_ccdf, threshold_sinr)
from snc_noma.units import db_to_lin, dbm_to_watt, lin_to_db, watt_to_dbm

snr = st.floats(0.05, 200.0)
ratio = st.floats(0.0, 5.0)


# -- units and budgets --------------------------------------------------------

def test_unit_roundtrip():
    x = np.array([-30.0, 0.0, 17.5])
    assert np.allclose(lin_to_db(db_to_lin(x)), x)
    assert np.allclose(watt_to_dbm(dbm_to_watt(x)), x)
    assert dbm_to_watt(30.0) == pytest.approx(1.0)


def test_noise_power_reference():
    # -176 dBm/Hz = 10^-20.6 W/Hz, worked by hand
    oracle = 10.0 ** -20.6 * 2e6
    assert noise_power(SystemConfig()) == pytest.approx(oracle, rel=1e-12)
    assert noise_power(SystemConfig()) == pytest.approx(5.024e-15, rel=1e-3)


def test_noise_power_dbm_definition_and_linearity():
    c = SystemConfig(noise_psd_dbm_hz=0.0, bandwidth_hz=1.0, slot_s=1.0, cus_per_packet=1, ps_bits=1)
    assert noise_power(c) == pytest.approx(1e-3)
    half = SystemConfig(bandwidth_hz=1e6, cus_per_packet=100)
    assert noise_power(half) == pytest.approx(noise_power(SystemConfig()) / 2, rel=1e-12)
    assert noise_power(half) == pytest.approx(2.512e-15, rel=1e-3)


def test_pathloss_literal_examples():
    c = SystemConfig(pathloss_ref_db=0.0, shadow_sigma_db=0.0)
    assert large_scale_gain(c, 1.0) == pytest.approx(1.0)
    assert large_scale_gain(c, 100.0) == pytest.approx(100.0 ** -2.5)
    assert large_scale_gain(c, 100.0) == pytest.approx(1e-5)


def test_pathloss_reference_offset():
    c = SystemConfig()
    assert large_scale_gain(c, 100.0) == pytest.approx(1e-5 * 1e-4)


def test_shadowing_monte_carlo():
    c = SystemConfig()
    rng = np.random.default_rng(7)
    n = 1_000_000
    b = [draw_link_budget(c, Role.WU, rng) for _ in range(n)]
    g = np.array([x.large_scale_gain for x in b])
    d = np.array([x.distance_m for x in b])
    x_db = 10 * np.log10(g * d ** c.pathloss_exp) + c.pathloss_ref_db
    assert abs(x_db.mean()) < 0.03
    assert x_db.std() == pytest.approx(8.0, rel=0.01)
    # radius density proportional to r on the annulus
    cdf = lambda r: (r ** 2 - c.min_distance_m ** 2) / (c.cell_radius_m ** 2 - c.min_distance_m ** 2)
    assert stats.kstest(d[:100_000], cdf).pvalue > 1e-3


@pytest.mark.parametrize("kw", [
    {"ps_bits": 0}, {"ps_bits": 401}, {"cus_per_packet": 2001}, {"bandwidth_hz": 0.0},
    {"pmax_w": -1.0}, {"min_distance_m": 600.0}, {"shadow_sigma_db": -1.0},
])
def test_config_invariants(kw):
    with pytest.raises(ConfigError):
        SystemConfig(**kw)


def test_config_derived():
    c = SystemConfig()
    assert c.attempts_per_slot == 10
    assert c.attempt_duration_s == pytest.approx(1e-4)
    assert c.packet_rate_hz == pytest.approx(250e3 / 150)
    assert c.code() == FbcCode(200, 150)


def test_link_budget_positive():
    with pytest.raises(ValueError):
        LinkBudget(Role.SU, 0.0)


# -- SINR ---------------------------------------------------------------------

def test_sinr_examples():
    s2 = 5.024e-15
    assert sinr_wu(0.0, 1e-10, s2) == 0
    assert sinr_wu(1.0, s2, s2) == 1
    assert sinr_wu(1.0, 1e-10, s2) == pytest.approx(1e-10 / 5.024e-15)
    assert sinr_wu(1.0, 1e-10, s2) == pytest.approx(1.99e4, rel=1e-3)
    assert sinr_su(1.0, s2, 1.0, s2, s2) == pytest.approx(0.5)
    assert sinr_su(10.0, s2, 4.0, s2, s2) == pytest.approx(2.0)


@given(st.floats(0, 10), st.floats(1e-12, 1e-6), st.floats(1e-16, 1e-12), st.floats(1e-12, 1e-6))
def test_su_without_interferer_is_wu(p, g, s2, gw):
    assert sinr_su(p, g, 0.0, gw, s2) == sinr_wu(p, g, s2)


def test_sinr_model_parameters():
    m = sinr_model(Role.SU, 2.0, 3.0, 0.5, 1.0, 0.25)
    assert m.mean_snr == pytest.approx(12.0)
    assert m.interference_ratio == pytest.approx(0.25 / 6.0)
    assert sinr_model(Role.WU, 2.0, 3.0, 0.5, 1.0, 0.25).interference_ratio == 0
    with pytest.raises(ValueError):
        SinrModel(Role.WU, 1.0, 0.1)


def test_ccdf_examples():
    m = SinrModel(Role.SU, 5.0, 0.5)
    assert su_sinr_ccdf(m, 0.0) == 1.0
    assert su_sinr_ccdf(SinrModel(Role.WU, 3.0), 3.0) == pytest.approx(math.exp(-1))
    assert su_sinr_ccdf(m, 2.0) == pytest.approx(math.exp(-0.4) / 2)
    assert su_sinr_ccdf(m, 2.0) == pytest.approx(0.33516, abs=1e-5)
    with pytest.raises(ValueError):
        su_sinr_ccdf(m, -1.0)


@pytest.mark.criterion(4)
def test_ccdf_monte_carlo():
    m = SinrModel(Role.SU, 5.0, 0.5)
    rng = np.random.default_rng(11)
    n = 1_000_000
    # oracle: ratio of independently drawn exponential powers
    z = 5.0 * rng.standard_exponential(n) / (0.5 * 5.0 * rng.standard_exponential(n) + 1.0)
    grid = np.array([0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 15.0])
    emp = (z[:, None] > grid).mean(axis=0)
    ana = su_sinr_ccdf(m, grid)
    se = np.sqrt(ana * (1 - ana) / n)
    assert np.all(np.abs(emp - ana) <= 3 * se)


def test_sample_matches_ccdf():
    m = SinrModel(Role.SU, 3.0, 0.2)
    z = m.sample(np.random.default_rng(2), 200_000)
    assert stats.kstest(z, lambda x: 1 - su_sinr_ccdf(m, np.maximum(x, 0))).pvalue > 1e-3


def test_pdf_examples():
    m = SinrModel(Role.SU, 5.0, 0.5)
    total = integrate.quad(lambda z: sinr_pdf(m, z), 0, np.inf, epsabs=1e-12)[0]
    assert total == pytest.approx(1.0, abs=1e-8)
    w = SinrModel(Role.WU, 4.0)
    assert sinr_pdf(w, 1.3) == pytest.approx(math.exp(-1.3 / 4) / 4, rel=1e-14)
    h = 1e-6
    fd = -(su_sinr_ccdf(m, 2.0 + h) - su_sinr_ccdf(m, 2.0 - h)) / (2 * h)
    assert sinr_pdf(m, 2.0) == pytest.approx(fd, rel=1e-5)
    with pytest.raises(ValueError):
        sinr_pdf(m, -0.1)


@given(snr, ratio, st.floats(0, 50), st.floats(0, 50))
def test_pdf_ccdf_consistency(g, r, a, b):
    a, b = min(a, b), max(a, b)
    m = SinrModel(Role.SU, g, r)
    area = integrate.quad(lambda z: sinr_pdf(m, z), a, b, epsabs=1e-13, epsrel=1e-12)[0]
    assert su_sinr_ccdf(m, a) - su_sinr_ccdf(m, b) == pytest.approx(area, abs=1e-8)


@given(snr, ratio, st.floats(0, 100), st.floats(0, 100))
def test_ccdf_monotone_in_z(g, r, a, b):
    m = SinrModel(Role.SU, g, r)
    lo, hi = min(a, b), max(a, b)
    assert su_sinr_ccdf(m, hi) <= su_sinr_ccdf(m, lo)


@given(snr, snr, ratio, st.floats(0, 100))
def test_ccdf_monotone_in_snr(g1, g2, r, z):
    lo, hi = min(g1, g2), max(g1, g2)
    assert su_sinr_ccdf(SinrModel(Role.SU, lo, r), z) <= su_sinr_ccdf(SinrModel(Role.SU, hi, r), z)


@given(st.floats(0.5, 50), st.floats(0, 4), st.floats(0.01, 1), st.floats(0.01, 20))
def test_ccdf_strictly_decreasing_in_ratio(g, r, dr, z):
    assert su_sinr_ccdf(SinrModel(Role.SU, g, r + dr), z) < su_sinr_ccdf(SinrModel(Role.SU, g, r), z)


# -- finite blocklength -------------------------------------------------------

def test_fbc_examples():
    code = FbcCode(200, 150)
    assert fbc_error(code, 0.0) == 1.0
    g0 = threshold_sinr(code)
    assert 200 * capacity(g0) == pytest.approx(150)
    assert fbc_error(code, g0) == pytest.approx(0.5, abs=1e-12)
    assert dispersion(1.0) == pytest.approx(0.75 * math.log2(math.e) ** 2)
    assert dispersion(1.0) == pytest.approx(1.5607, rel=1e-3)


def test_fbc_high_precision_oracle():
    mpmath.mp.dps = 40
    n, k, g = 200, 150, mpmath.mpf(1)
    c = mpmath.log(1 + g, 2)
    v = (1 - (1 + g) ** -2) * mpmath.log(mpmath.e, 2) ** 2
    x = (n * c - k) / mpmath.sqrt(n * v)
    oracle = float(mpmath.erfc(x / mpmath.sqrt(2)) / 2)
    assert float(x) == pytest.approx(2.830, abs=1e-3)
    assert fbc_error(FbcCode(n, k), 1.0) == pytest.approx(oracle, rel=1e-3)
    assert oracle == pytest.approx(2.33e-3, rel=1e-2)


@pytest.mark.parametrize("x", [-5.0, -1.0, 0.0, 0.3, 2.0, 7.5, 20.0, 37.0])
def test_qfunc_accuracy(x):
    mpmath.mp.dps = 40
    oracle = float(mpmath.erfc(mpmath.mpf(x) / mpmath.sqrt(2)) / 2)
    assert abs(float(qfunc(x)) - oracle) <= 1e-12
    assert float(qfunc(x)) == pytest.approx(oracle, rel=1e-12)


def test_fbc_monotone_grids():
    gam = np.logspace(-3, 4, 400)
    for n in (50, 100, 200, 500, 1000, 2000):
        for k in (50, 100, 200, 400):
            if k > 2 * n:
                continue
            e = fbc_error(FbcCode(n, k), gam)
            assert np.all(np.diff(e) <= 0)
            assert np.all((0 <= e) & (e <= 1))
    for k in (50, 100, 200, 400):
        ns = [n for n in (200, 300, 500, 1000, 2000) if k <= 2 * n]
        errs = np.array([fbc_error(FbcCode(n, k), gam) for n in ns])
        assert np.all(np.diff(errs, axis=0) <= 0)
    for n in (200, 500, 2000):
        errs = np.array([fbc_error(FbcCode(n, k), gam) for k in (50, 100, 200, 400)])
        assert np.all(np.diff(errs, axis=0) >= 0)


def test_fbc_code_validation():
    with pytest.raises(ValueError):
        FbcCode(100, 201)
    with pytest.raises(ValueError):
        fbc_error(FbcCode(200, 150), -1.0)


# -- pairing ------------------------------------------------------------------

def _budgets(gains):
    return [LinkBudget(Role.WU, g, float(i)) for i, g in enumerate(gains)]


def _matchings(items):
    if not items:
        yield []
        return
    first = items[0]
    for i in range(1, len(items)):
        rest = items[1:i] + items[i + 1:]
        for m in _matchings(rest):
            yield [(first, items[i])] + m


def _gap_profile(matching):
    return sorted((abs(a - b) for a, b in matching), reverse=True)


def test_pairing_reference():
    pairs = pair_ues(_budgets([4, 3, 2, 1]))
    got = {(s.large_scale_gain, w.large_scale_gain) for s, w in pairs}
    assert got == {(4, 1), (3, 2)}
    assert all(s.role == Role.SU and w.role == Role.WU for s, w in pairs)
    # brute force over all three pairings: nested pairing has the
    # lexicographically largest descending gap profile
    best = max(_matchings([4, 3, 2, 1]), key=_gap_profile)
    assert {tuple(sorted(p, reverse=True)) for p in best} == got


@given(st.lists(st.integers(1, 10**6), min_size=2, max_size=8, unique=True)
       .filter(lambda x: len(x) % 2 == 0))
def test_pairing_brute_force(gains):
    got = {(s.large_scale_gain, w.large_scale_gain) for s, w in pair_ues(_budgets(gains))}
    best = max(_matchings(list(gains)), key=_gap_profile)
    assert {tuple(sorted(p, reverse=True)) for p in best} == got


def test_pairing_two_and_ties():
    (s, w), = pair_ues(_budgets([1.0, 5.0]))
    assert s.large_scale_gain == 5.0 and w.large_scale_gain == 1.0
    (s, w), = pair_ues(_budgets([2.0, 2.0]))
    assert s.distance_m == 0.0 and w.distance_m == 1.0
    with pytest.raises(OddCount):
        pair_ues(_budgets([1, 2, 3]))
