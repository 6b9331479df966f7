"""Minimum-power allocation for a NOMA pair under delay and AoI tail constraints.

The WU is interference-free, so its power is found first; the SU power is then
found with the WU transmitting at its minimum, which minimizes the
interference the SU sees. Each stage is a bisection over the UE's own power,
valid because both bounds are non-increasing in own power.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

from .channel import LinkBudget, Role, SystemConfig, noise_power, sinr_model
from .snc import BoundResult, QosSpec, bounds_for

LOWER_BRACKET = 1e-6
REL_TOL = 1e-4
BINDING_TOL = 0.05


class Infeasible(RuntimeError):
    def __init__(self, stage: Role, message: str = ""):
        super().__init__(message or f"{Role(stage).value} infeasible at maximum power")
        self.stage = Role(stage)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"


class Scheme(str, enum.Enum):
    NOMA = "noma"
    OMA = "oma"


@dataclass(frozen=True)
class AllocationProblem:
    config: SystemConfig
    su: LinkBudget
    wu: LinkBudget
    qos_su: QosSpec
    qos_wu: QosSpec
    scheme: Scheme = Scheme.NOMA
    granularity: str = "attempt"
    # per-role arrival rates (bit/s); None keeps config.arrival_rate_bps
    rate_su_bps: float | None = None
    rate_wu_bps: float | None = None

    def __post_init__(self):
        if self.su.large_scale_gain < self.wu.large_scale_gain:
            raise ValueError("SU must have the larger large-scale gain")

    @classmethod
    def build(cls, config, su, wu, qos, qos_wu=None, **kw) -> "AllocationProblem":
        return cls(config, su, wu, qos, qos_wu or qos, **kw)

    def qos(self, role: Role) -> QosSpec:
        return self.qos_su if Role(role) == Role.SU else self.qos_wu

    def budget(self, role: Role) -> LinkBudget:
        return self.su if Role(role) == Role.SU else self.wu

    def role_config(self, role: Role) -> SystemConfig:
        rate = self.rate_su_bps if Role(role) == Role.SU else self.rate_wu_bps
        return self.config if rate is None else replace(self.config, arrival_rate_bps=rate)

    def as_oma(self, mode: str = "fixed_duration") -> "AllocationProblem":
        """Each UE on its own half-bandwidth subchannel, no interference."""
        return replace(self, config=oma_config(self.config, mode), scheme=Scheme.OMA)


@dataclass
class Evaluation:
    feasible: bool
    margins: dict[str, float]
    sdvp: BoundResult
    savp: BoundResult


@dataclass
class AllocationResult:
    p_w_star: float
    p_s_star: float
    bounds_at_opt: dict[str, float] = field(default_factory=dict)
    binding: set[str] = field(default_factory=set)
    iterations: dict[str, int] = field(default_factory=dict)
    status: Status = Status.OPTIMAL
    failed_stage: Role | None = None
    scheme: Scheme = Scheme.NOMA

    @property
    def total_power(self) -> float:
        return self.p_w_star + self.p_s_star


def evaluate(role: Role, p_own: float, p_interferer: float, problem: AllocationProblem) -> Evaluation:
    role = Role(role)
    cfg = problem.role_config(role)
    sigma2 = noise_power(cfg)
    if role == Role.SU and problem.scheme == Scheme.NOMA:
        model = sinr_model(role, p_own, problem.su.large_scale_gain, sigma2,
                           p_interferer, problem.wu.large_scale_gain)
    else:
        model = sinr_model(role, p_own, problem.budget(role).large_scale_gain, sigma2)
    qos = problem.qos(role)
    sdvp, savp = bounds_for(cfg, model, qos, problem.granularity)
    margins = {"sdvp": qos.eps_delay - sdvp.value, "savp": qos.eps_aoi - savp.value}
    ok = sdvp.stable and savp.stable and margins["sdvp"] >= 0 and margins["savp"] >= 0
    return Evaluation(ok, margins, sdvp, savp)


def feasible(role: Role, p_own: float, p_interferer: float,
             problem: AllocationProblem) -> tuple[bool, dict[str, float]]:
    """Whether both tail bounds of ``role`` meet their thresholds, with signed margins."""
    ev = evaluate(role, p_own, p_interferer, problem)
    return ev.feasible, ev.margins


def _bisect(role: Role, p_interferer: float, problem: AllocationProblem) -> tuple[float, int]:
    pmax = problem.config.pmax_w
    lo = pmax * LOWER_BRACKET
    if feasible(role, lo, p_interferer, problem)[0]:
        return lo, 1
    if not feasible(role, pmax, p_interferer, problem)[0]:
        raise Infeasible(role)
    hi = pmax
    n = 2
    while hi - lo > REL_TOL * hi:
        mid = math.sqrt(lo * hi)
        n += 1
        if feasible(role, mid, p_interferer, problem)[0]:
            hi = mid
        else:
            lo = mid
    return hi, n


def min_power_wu(problem: AllocationProblem) -> float:
    return _bisect(Role.WU, 0.0, problem)[0]


def min_power_su(problem: AllocationProblem, p_w_star: float) -> float:
    interferer = p_w_star if problem.scheme == Scheme.NOMA else 0.0
    return _bisect(Role.SU, interferer, problem)[0]


def _record(res: AllocationResult, role: Role, p_own: float, p_int: float,
            problem: AllocationProblem) -> None:
    ev = evaluate(role, p_own, p_int, problem)
    tag = "s" if role == Role.SU else "w"
    qos = problem.qos(role)
    res.bounds_at_opt[f"sdvp_{tag}"] = ev.sdvp.value
    res.bounds_at_opt[f"savp_{tag}"] = ev.savp.value
    if ev.sdvp.value >= (1 - BINDING_TOL) * qos.eps_delay:
        res.binding.add(f"sdvp_{tag}")
    if ev.savp.value >= (1 - BINDING_TOL) * qos.eps_aoi:
        res.binding.add(f"savp_{tag}")


def allocate(problem: AllocationProblem) -> AllocationResult:
    """Sequential WU-then-SU minimum-power allocation.

    On failure the result is Infeasible, the failing UE is reported in
    ``failed_stage`` and unsolved stages are reported at ``pmax``.
    Under NOMA a failed WU stage stops before the SU is evaluated.
    """
    if problem.scheme == Scheme.OMA:
        return _allocate_independent(problem)
    pmax = problem.config.pmax_w
    try:
        p_w, it_w = _bisect(Role.WU, 0.0, problem)
    except Infeasible:
        res = AllocationResult(pmax, pmax, iterations={"WU": 2}, status=Status.INFEASIBLE,
                               failed_stage=Role.WU)
        res.binding.add("pmax_w")
        _record(res, Role.WU, pmax, 0.0, problem)
        return res
    res = AllocationResult(p_w, pmax, iterations={"WU": it_w})
    _record(res, Role.WU, p_w, 0.0, problem)
    try:
        res.p_s_star, res.iterations["SU"] = _bisect(Role.SU, p_w, problem)
    except Infeasible:
        res.iterations["SU"] = 2
        res.status = Status.INFEASIBLE
        res.failed_stage = Role.SU
        res.binding.add("pmax_s")
    _record(res, Role.SU, res.p_s_star, p_w, problem)
    return res


def _allocate_independent(problem: AllocationProblem) -> AllocationResult:
    pmax = problem.config.pmax_w
    res = AllocationResult(pmax, pmax, scheme=problem.scheme)
    for role in (Role.WU, Role.SU):
        try:
            p, res.iterations[role.value] = _bisect(role, 0.0, problem)
        except Infeasible:
            p, res.iterations[role.value] = pmax, 2
            res.status = Status.INFEASIBLE
            res.failed_stage = res.failed_stage or role
            res.binding.add("pmax_w" if role == Role.WU else "pmax_s")
        if role == Role.WU:
            res.p_w_star = p
        else:
            res.p_s_star = p
        _record(res, role, p, 0.0, problem)
    return res


def oma_config(config: SystemConfig, mode: str = "fixed_duration") -> SystemConfig:
    """Per-UE subchannel of an orthogonal split.

    ``fixed_duration``: half the bandwidth over the same attempt duration, so
    each attempt carries the packet on half the channel uses.
    ``fixed_blocklength``: half the bandwidth with the full blocklength, so
    each attempt lasts twice as long.
    """
    half = config.bandwidth_hz / 2.0
    if mode == "fixed_duration":
        if config.cus_per_packet % 2:
            raise ValueError("fixed_duration OMA needs an even cus_per_packet")
        return replace(config, bandwidth_hz=half, cus_per_packet=config.cus_per_packet // 2)
    if mode == "fixed_blocklength":
        return replace(config, bandwidth_hz=half)
    raise ValueError(f"unknown OMA mode {mode!r}")


def allocate_oma(problem: AllocationProblem, mode: str = "fixed_duration") -> AllocationResult:
    """Baseline: each UE solved alone on a half-bandwidth subchannel."""
    return _allocate_independent(problem.as_oma(mode))


def relative_saving(p_oma: float, p_noma: float) -> float:
    return (p_oma - p_noma) / p_oma
