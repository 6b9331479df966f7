"""MGF-based tail bounds on packet delay and peak AoI.

Arrivals and service are counted in packets over a calculus step. By default
the step is one transmission attempt (``granularity="attempt"``): Poisson
arrivals over the step and one Bernoulli service opportunity whose success
probability is averaged over a fresh fading draw. ``granularity="slot"``
groups the ``K`` attempts of a slot under one fading draw instead.

Delay:   P(D > w steps)  <= inf_theta  M_S(theta)^w / (1 - M_A(theta) M_S(theta))
Peak AoI: P(A > d)       <= inf_theta  e^{-theta d} M_T(theta) M_Y(theta)
                                       / (1 - M_T(theta) M_Y(-theta))

with M_A the per-step arrival MGF, M_S the per-step service inverse MGF,
M_T the service-time MGF and M_Y the inter-arrival MGF.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable

from scipy import integrate

from .channel import LOG2E, FbcCode, SinrModel, SystemConfig, fbc_argument

_SQRT2 = math.sqrt(2.0)

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
# Q(x) underflows to 0 in double precision beyond x ~ 38.5
_Q_ZERO_ARG = 38.5


class QuadratureFailure(ArithmeticError):
    pass


class DegenerateService(ArithmeticError):
    pass


class EmptyRegion(ArithmeticError):
    pass


@dataclass(frozen=True)
class QosSpec:
    target_delay_s: float
    eps_delay: float
    target_aoi_s: float
    eps_aoi: float
    theta_max_hint: float = 50.0

    def __post_init__(self):
        if not (0 < self.eps_delay < 1 and 0 < self.eps_aoi < 1):
            raise ValueError("violation thresholds must lie in (0, 1)")
        if not (self.target_delay_s > 0 and self.target_aoi_s > 0):
            raise ValueError("targets must be > 0")
        if not self.theta_max_hint > 0:
            raise ValueError("theta_max_hint must be > 0")


@dataclass(frozen=True)
class TrafficModel:
    pkt_rate_per_slot: float
    interarrival_rate_hz: float


@dataclass(frozen=True)
class ServiceModel:
    attempts_per_slot: int
    attempt_duration_s: float
    sinr_model: SinrModel
    code: FbcCode

    @property
    def step_s(self) -> float:
        return self.attempts_per_slot * self.attempt_duration_s


@dataclass(frozen=True)
class BoundResult:
    value: float
    theta_star: float
    theta_region: tuple[float, float]
    stable: bool
    kernel_evals: int


def traffic_model(config: SystemConfig, step_s: float) -> TrafficModel:
    rate = config.packet_rate_hz
    return TrafficModel(rate * step_s, rate)


def service_model(config: SystemConfig, sinr: SinrModel, granularity: str = "attempt") -> ServiceModel:
    if granularity == "attempt":
        k = 1
    elif granularity == "slot":
        k = config.attempts_per_slot
    else:
        raise ValueError(f"unknown granularity {granularity!r}")
    if k < 1:
        raise ValueError("no transmission attempt fits in a slot")
    return ServiceModel(k, config.attempt_duration_s, sinr, config.code())


def build_models(config: SystemConfig, sinr: SinrModel,
                 granularity: str = "attempt") -> tuple[TrafficModel, ServiceModel]:
    svc = service_model(config, sinr, granularity)
    return traffic_model(config, svc.step_s), svc


# -- expectations over the SINR law -------------------------------------------

@functools.lru_cache(maxsize=1024)
def _error_support(code: FbcCode) -> float:
    """Smallest SINR above which the decoding error is exactly 0 in double."""
    lo, hi = 0.0, 1.0
    while fbc_argument(code, hi) < _Q_ZERO_ARG:
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fbc_argument(code, mid) < _Q_ZERO_ARG:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return hi


def _scalar_error(code: FbcCode) -> Callable[[float], float]:
    """Scalar FBC block error, equal to ``channel.fbc_error`` but without numpy overhead."""
    n, k = code.n_cu, code.k_bits

    def eps(z: float) -> float:
        if z <= 0.0:
            return 1.0
        l1p = math.log1p(z)
        v = -math.expm1(-2.0 * l1p) * LOG2E * LOG2E
        x = (n * l1p * LOG2E - k) / math.sqrt(n * v)
        return 0.5 * math.erfc(x / _SQRT2)

    return eps


def _scalar_pdf(model: SinrModel) -> Callable[[float], float]:
    g, r = model.mean_snr, model.interference_ratio

    def pdf(z: float) -> float:
        u = 1.0 + z * r
        return math.exp(-z / g) * (1.0 / (g * u) + r / (u * u))

    return pdf


def expect_over_sinr(fn: Callable[[float], float], model: SinrModel, code: FbcCode,
                     rtol: float = 1e-9) -> float:
    """E[fn(gamma)] for an ``fn`` that vanishes wherever the decoding error is 0.

    Adaptive Gauss-Kronrod over [0, z_max], z_max the smaller of the error
    support and the point where the SINR CCDF falls below 1e-12.
    """
    if model.mean_snr == 0:
        return float(fn(0.0))
    z_err = _error_support(code)
    z_ccdf = model.mean_snr * math.log(1e12)
    upper = min(z_err, z_ccdf)
    breaks = sorted({p for p in (2.0 ** (code.k_bits / code.n_cu) - 1.0, model.mean_snr)
                     if 0 < p < upper})

    pdf = _scalar_pdf(model)

    def integrand(z):
        return fn(z) * pdf(z)

    val, abserr, info = integrate.quad(integrand, 0.0, upper, points=breaks or None,
                                       epsabs=1e-15, epsrel=rtol, limit=500,
                                       full_output=1)[:3]
    if abserr > max(1e-13, 1e-6 * abs(val)):
        raise QuadratureFailure(f"quadrature error {abserr:.3g} on value {val:.3g}")
    return float(val)


@functools.lru_cache(maxsize=65536)
def mean_decoding_error(model: SinrModel, code: FbcCode) -> float:
    """Fading-averaged block error probability of one attempt."""
    if model.mean_snr == 0:
        return 1.0
    return min(1.0, max(0.0, expect_over_sinr(_scalar_error(code), model, code)))


def success_probability(svc: ServiceModel) -> float:
    return 1.0 - mean_decoding_error(svc.sinr_model, svc.code)


# -- MGFs ---------------------------------------------------------------------

def arrival_mgf(theta: float, traffic: TrafficModel) -> float:
    """E[exp(theta * A)] for Poisson packet arrivals over one step."""
    try:
        return math.exp(traffic.pkt_rate_per_slot * math.expm1(theta))
    except OverflowError:
        return math.inf


def conditional_inv_mgf(theta: float, eps: float, k: int) -> float:
    """E[exp(-theta * S) | eps] for S ~ Binomial(k, 1 - eps)."""
    c = math.exp(-theta)
    return (c + eps * (1.0 - c)) ** k


def service_inv_mgf(theta: float, svc: ServiceModel) -> float:
    """E[exp(-theta * S)], S the packets served in one step."""
    c = math.exp(-theta)
    k = svc.attempts_per_slot
    if k == 1:
        return conditional_inv_mgf(theta, mean_decoding_error(svc.sinr_model, svc.code), 1)
    if svc.sinr_model.mean_snr == 0:
        return 1.0
    code = svc.code
    ck = c ** k
    eps = _scalar_error(code)

    def excess(z):
        return (c + eps(z) * (1.0 - c)) ** k - ck

    return ck + expect_over_sinr(excess, svc.sinr_model, code)


def geometric_time_mgf(theta: float, q: float, tau: float) -> float:
    """MGF of N * tau with N geometric on {1, 2, ...} of success probability q."""
    try:
        g = math.exp(theta * tau)
    except OverflowError:
        return math.inf
    if (1.0 - q) * g >= 1.0:
        return math.inf
    return q * g / (1.0 - (1.0 - q) * g)


def service_time_mgf(theta: float, svc: ServiceModel) -> float:
    """MGF of the ARQ service time: geometric attempt count times attempt duration."""
    q = success_probability(svc)
    if q <= 0:
        raise DegenerateService("decoding never succeeds")
    return geometric_time_mgf(theta, q, svc.attempt_duration_s)


def interarrival_mgf(theta: float, traffic: TrafficModel) -> float:
    nu = traffic.interarrival_rate_hz
    if theta >= nu:
        return math.inf
    return nu / (nu - theta)


def interarrival_inv_mgf(theta: float, traffic: TrafficModel) -> float:
    nu = traffic.interarrival_rate_hz
    return nu / (nu + theta)


# -- exponent search ----------------------------------------------------------

def stability_region(margin: Callable[[float], float], theta_max_hint: float = 50.0,
                     rtol: float = 1e-9) -> tuple[float, float]:
    """Maximal interval (0, hi) on which ``margin`` is negative.

    ``margin`` is convex with ``margin(0) = 0``, so its negative set is an
    interval starting at the origin. Raises EmptyRegion if no probe is negative.
    """
    def neg(t):
        m = margin(t)
        return m < 0 and not math.isnan(m)

    if neg(theta_max_hint):
        return 0.0, theta_max_hint
    bad = theta_max_hint
    good = None
    t = theta_max_hint
    for _ in range(120):
        t *= 0.5
        if neg(t):
            good = t
            break
        bad = t
    if good is None:
        raise EmptyRegion("stability condition fails at every probed exponent")
    while bad - good > rtol * good:
        mid = 0.5 * (good + bad)
        if neg(mid):
            good = mid
        else:
            bad = mid
    return 0.0, good


def golden_section(f: Callable[[float], float], a: float, b: float,
                   rtol: float = 1e-6, max_iter: int = 200) -> tuple[float, float, int]:
    """Minimize a unimodal ``f`` on [a, b]; returns (x, f(x), evaluations)."""
    width0 = b - a
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    evals = 2
    for _ in range(max_iter):
        if b - a <= rtol * width0:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = f(d)
        evals += 1
    return (c, fc, evals) if fc <= fd else (d, fd, evals)


def _minimize_log_kernel(log_kernel, margin, hint, cap=math.inf) -> BoundResult:
    evals = [0]

    def counted_margin(t):
        evals[0] += 1
        return margin(t)

    try:
        region = stability_region(counted_margin, hint)
    except EmptyRegion:
        return BoundResult(1.0, math.nan, (0.0, 0.0), False, evals[0])
    hi = min(region[1], cap)
    # open interval: the kernel diverges at both ends
    x, fx, n = golden_section(log_kernel, hi * 1e-12, hi * (1.0 - 1e-12))
    value = 1.0 if fx >= 0 else math.exp(fx)
    return BoundResult(value, x, (0.0, hi), True, evals[0] + n)


def sdvp_log_kernel(theta: float, w_slots: float, traffic: TrafficModel, svc: ServiceModel) -> float:
    ms = service_inv_mgf(theta, svc)
    prod = arrival_mgf(theta, traffic) * ms
    if not prod < 1.0:
        return math.inf
    return w_slots * math.log(ms) - math.log1p(-prod)


def sdvp_kernel(theta, w_slots, traffic, svc):
    return math.exp(sdvp_log_kernel(theta, w_slots, traffic, svc))


def sdvp_margin(theta: float, traffic: TrafficModel, svc: ServiceModel) -> float:
    return arrival_mgf(theta, traffic) * service_inv_mgf(theta, svc) - 1.0


def ub_sdvp(w_slots: int, traffic: TrafficModel, svc: ServiceModel,
            theta_max_hint: float = 50.0) -> BoundResult:
    """Upper bound on P(delay > w_slots calculus steps)."""
    if w_slots < 0:
        raise ValueError("w_slots must be >= 0")
    return _minimize_log_kernel(
        lambda t: sdvp_log_kernel(t, w_slots, traffic, svc),
        lambda t: sdvp_margin(t, traffic, svc),
        theta_max_hint)


def delay_slots(target_s: float, svc: ServiceModel) -> int:
    """Largest ``w`` with (w + 1) steps <= target.

    A packet arriving inside step j is first served in step j + 1, so a
    departure within w steps of its arrival step happens at most
    (w + 1) steps after the arrival instant.
    """
    return max(0, int(math.floor(target_s / svc.step_s + 1e-9)) - 1)


def ub_sdvp_seconds(target_s: float, traffic: TrafficModel, svc: ServiceModel,
                    theta_max_hint: float = 50.0) -> BoundResult:
    return ub_sdvp(delay_slots(target_s, svc), traffic, svc, theta_max_hint)


def savp_margin(theta: float, traffic: TrafficModel, svc: ServiceModel) -> float:
    return service_time_mgf(theta, svc) * interarrival_inv_mgf(theta, traffic) - 1.0


def savp_log_kernel(theta: float, d_s: float, traffic: TrafficModel, svc: ServiceModel) -> float:
    mt = service_time_mgf(theta, svc)
    my = interarrival_mgf(theta, traffic)
    prod = mt * interarrival_inv_mgf(theta, traffic)
    if not (prod < 1.0 and math.isfinite(my)):
        return math.inf
    return -theta * d_s + math.log(mt) + math.log(my) - math.log1p(-prod)


def savp_kernel(theta, d_s, traffic, svc):
    return math.exp(savp_log_kernel(theta, d_s, traffic, svc))


def ub_savp(d_s: float, traffic: TrafficModel, svc: ServiceModel) -> BoundResult:
    """Upper bound on P(peak AoI > d_s); the exponent is in 1/s."""
    if d_s < 0:
        raise ValueError("d_s must be >= 0")
    q = success_probability(svc)
    nu = traffic.interarrival_rate_hz
    # the log of the margin product is convex and vanishes at 0, so the region
    # is empty unless its slope there, E[T] - E[Y], is negative; checked
    # directly because the MGF cancels badly near 0 when q is tiny
    if q <= 0 or svc.attempt_duration_s / q >= 1.0 / nu:
        return BoundResult(1.0, math.nan, (0.0, 0.0), False, 0)
    return _minimize_log_kernel(
        lambda t: savp_log_kernel(t, d_s, traffic, svc),
        lambda t: savp_margin(t, traffic, svc),
        nu, cap=nu)


def bounds_for(config: SystemConfig, sinr: SinrModel, qos: QosSpec,
               granularity: str = "attempt") -> tuple[BoundResult, BoundResult]:
    """(UB-SDVP, UB-SAVP) at the targets of ``qos``."""
    traffic, svc = build_models(config, sinr, granularity)
    return (ub_sdvp_seconds(qos.target_delay_s, traffic, svc, qos.theta_max_hint),
            ub_savp(qos.target_aoi_s, traffic, svc))

