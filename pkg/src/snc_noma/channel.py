"""Physical layer of an uplink NOMA pair.

Link budgets (distance-based path loss with lognormal shadowing), the
post-SIC SINR of the strong and weak user under Rayleigh fading, and the
normal-approximation decoding error of a finite-blocklength short packet.

The base station decodes the strong user (SU) first while the weak user
(WU) is still superimposed, then cancels it; the WU is decoded
interference-free.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import erfc

from .units import db_to_lin, dbm_to_watt

LOG2E = math.log2(math.e)


class ConfigError(ValueError):
    pass


class OddCount(ValueError):
    pass


class Role(str, enum.Enum):
    SU = "SU"
    WU = "WU"


@dataclass(frozen=True)
class SystemConfig:
    """Physical and traffic parameters of one scenario.

    Units: Hz, s, bits, bit/s, dBm/Hz, W, m, dB. ``cus_per_packet`` is the
    number of channel uses one transmission attempt occupies.
    ``pathloss_ref_db`` is the path loss at the 1 m reference distance.
    """

    bandwidth_hz: float = 2e6
    slot_s: float = 1e-3
    ps_bits: int = 150
    arrival_rate_bps: float = 250e3
    noise_psd_dbm_hz: float = -176.0
    pmax_w: float = 2.0
    cell_radius_m: float = 500.0
    pathloss_exp: float = 2.5
    shadow_sigma_db: float = 8.0
    cus_per_packet: int = 200
    pathloss_ref_db: float = 40.0
    min_distance_m: float = 10.0

    def __post_init__(self):
        for name in ("bandwidth_hz", "slot_s", "pmax_w", "cell_radius_m",
                     "pathloss_exp", "min_distance_m"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if self.arrival_rate_bps < 0:
            raise ConfigError("arrival_rate_bps must be >= 0")
        if self.shadow_sigma_db < 0:
            raise ConfigError("shadow_sigma_db must be >= 0")
        if self.pathloss_ref_db < 0:
            raise ConfigError("pathloss_ref_db must be >= 0")
        if self.min_distance_m >= self.cell_radius_m:
            raise ConfigError("min_distance_m must be below cell_radius_m")
        if int(self.cus_per_packet) != self.cus_per_packet or self.cus_per_packet < 1:
            raise ConfigError("cus_per_packet must be a positive integer")
        if int(self.ps_bits) != self.ps_bits or not 1 <= self.ps_bits <= 2 * self.cus_per_packet:
            raise ConfigError(
                f"ps_bits must be an integer in [1, 2*cus_per_packet], got {self.ps_bits!r}")
        if self.cus_per_packet > self.bandwidth_hz * self.slot_s * (1 + 1e-12):
            raise ConfigError("cus_per_packet exceeds the channel uses available in one slot")

    @property
    def attempt_duration_s(self) -> float:
        return self.cus_per_packet / self.bandwidth_hz

    @property
    def attempts_per_slot(self) -> int:
        return int(math.floor(self.bandwidth_hz * self.slot_s / self.cus_per_packet + 1e-9))

    @property
    def packet_rate_hz(self) -> float:
        return self.arrival_rate_bps / self.ps_bits

    def code(self) -> "FbcCode":
        return FbcCode(self.cus_per_packet, self.ps_bits)


@dataclass(frozen=True)
class LinkBudget:
    role: Role
    large_scale_gain: float
    distance_m: float = float("nan")

    def __post_init__(self):
        if not self.large_scale_gain > 0:
            raise ValueError("large_scale_gain must be > 0")


@dataclass(frozen=True)
class FbcCode:
    n_cu: int
    k_bits: int

    def __post_init__(self):
        if self.n_cu < 1 or self.k_bits < 1:
            raise ValueError("n_cu and k_bits must be positive")
        if self.k_bits / self.n_cu > 2:
            raise ValueError("coding rate above 2 bits per channel use")


def noise_power(config: SystemConfig) -> float:
    """Noise power in W over one subchannel."""
    return float(dbm_to_watt(config.noise_psd_dbm_hz)) * config.bandwidth_hz


def large_scale_gain(config: SystemConfig, distance_m, shadow_db=0.0):
    return (db_to_lin(-config.pathloss_ref_db) * np.asarray(distance_m, dtype=float)
            ** -config.pathloss_exp * db_to_lin(shadow_db))


def draw_link_budget(config: SystemConfig, role: Role, rng: np.random.Generator) -> LinkBudget:
    """Drop one UE uniformly on the annulus [min_distance_m, cell_radius_m]."""
    r2 = rng.uniform(config.min_distance_m ** 2, config.cell_radius_m ** 2)
    d = math.sqrt(r2)
    x_db = rng.normal(0.0, config.shadow_sigma_db)
    return LinkBudget(Role(role), float(large_scale_gain(config, d, x_db)), d)


def pair_ues(budgets: Sequence[LinkBudget]) -> list[tuple[LinkBudget, LinkBudget]]:
    """Pair the i-th strongest UE with the i-th weakest.

    Returns (SU, WU) tuples with roles reassigned. Ties keep input order,
    the earlier UE becoming the SU.
    """
    if len(budgets) % 2:
        raise OddCount(f"cannot pair {len(budgets)} UEs")
    order = sorted(range(len(budgets)), key=lambda i: -budgets[i].large_scale_gain)
    n = len(order)
    return [(replace(budgets[order[i]], role=Role.SU),
             replace(budgets[order[n - 1 - i]], role=Role.WU)) for i in range(n // 2)]


def sinr_wu(p_w, g_w, sigma2):
    return p_w * g_w / sigma2


def sinr_su(p_s, g_s, p_w, g_w, sigma2):
    return p_s * g_s / (p_w * g_w + sigma2)


@dataclass(frozen=True)
class SinrModel:
    """Distribution of the instantaneous post-SIC SINR under Rayleigh fading.

    With unit-mean exponential power gains ``h_s, h_w`` the SU sees
    ``mean_snr * h_s / (interference_ratio * mean_snr * h_w + 1)``;
    the WU has ``interference_ratio == 0``.
    """

    role: Role
    mean_snr: float
    interference_ratio: float = 0.0

    def __post_init__(self):
        if self.mean_snr < 0 or self.interference_ratio < 0:
            raise ValueError("mean_snr and interference_ratio must be >= 0")
        if self.role == Role.WU and self.interference_ratio != 0:
            raise ValueError("the WU is decoded interference-free")

    def ccdf(self, z):
        return su_sinr_ccdf(self, z)

    def pdf(self, z):
        return sinr_pdf(self, z)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        own = self.mean_snr * rng.standard_exponential(size)
        if self.interference_ratio == 0:
            return own
        interf = self.interference_ratio * self.mean_snr * rng.standard_exponential(size)
        return own / (interf + 1.0)


def sinr_model(role: Role, p_own: float, g_own: float, sigma2: float,
               p_int: float = 0.0, g_int: float = 0.0) -> SinrModel:
    """Model for ``role`` at the given powers; the interferer only matters for the SU."""
    role = Role(role)
    mean_snr = p_own * g_own / sigma2
    if role == Role.WU or p_int == 0:
        return SinrModel(role, mean_snr, 0.0)
    if mean_snr == 0:
        return SinrModel(role, 0.0, 0.0)
    return SinrModel(role, mean_snr, p_int * g_int / (p_own * g_own))


def _check_domain(z):
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("SINR argument must be >= 0")
    return z


def su_sinr_ccdf(model: SinrModel, z):
    z = _check_domain(z)
    if model.mean_snr == 0:
        return np.where(z > 0, 0.0, 1.0)[()]
    return (np.exp(-z / model.mean_snr) / (1.0 + z * model.interference_ratio))[()]


def sinr_pdf(model: SinrModel, z):
    z = _check_domain(z)
    if model.mean_snr == 0:
        raise ValueError("SINR is identically zero; no density")
    r = model.interference_ratio
    u = 1.0 + z * r
    return (np.exp(-z / model.mean_snr) * (1.0 / (model.mean_snr * u) + r / (u * u)))[()]


def qfunc(x):
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def capacity(sinr):
    return np.log1p(sinr) / math.log(2.0)


def dispersion(sinr):
    # 1 - (1+g)^-2 computed without cancellation for small g
    return -np.expm1(-2.0 * np.log1p(sinr)) * LOG2E ** 2


def fbc_argument(code: FbcCode, sinr):
    """Argument of Q in the normal approximation; +inf/-inf at the edges."""
    g = np.asarray(sinr, dtype=float)
    n, k = code.n_cu, code.k_bits
    with np.errstate(divide="ignore", invalid="ignore"):
        x = (n * capacity(g) - k) / np.sqrt(n * dispersion(g))
    return np.where(g > 0, x, -np.inf)


def fbc_error(code: FbcCode, sinr):
    """Block error probability of one attempt at instantaneous SINR ``sinr``."""
    g = np.asarray(sinr, dtype=float)
    if np.any(g < 0):
        raise ValueError("SINR must be >= 0")
    return np.clip(qfunc(fbc_argument(code, g)), 0.0, 1.0)[()]


def threshold_sinr(code: FbcCode) -> float:
    """SINR at which the code rate equals capacity (error 1/2)."""
    return 2.0 ** (code.k_bits / code.n_cu) - 1.0
