"""Scenario files: a strict YAML schema for experiments.

Unknown keys, duplicate keys, wrong types and missing required sections are
rejected with the offending line number. Units: Hz, s, bits, bit/s, W,
dBm/Hz, dB, m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .channel import ConfigError, LinkBudget, Role, SystemConfig, draw_link_budget, pair_ues
from .opt import AllocationProblem, Scheme
from .snc import QosSpec

REQUIRED = ("system", "links", "qos")


class ScenarioError(ConfigError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class SweepAxes:
    target_delay_s: tuple[float, ...] = (1.1e-3, 1.2e-3, 1.3e-3, 1.4e-3, 1.5e-3, 1.6e-3, 1.7e-3,
                                         1.8e-3, 1.9e-3)
    target_aoi_s: tuple[float, ...] = (1.0e-3, 1.1e-3, 1.2e-3, 1.3e-3, 1.4e-3, 1.5e-3, 1.6e-3,
                                       1.7e-3, 1.8e-3)
    ps_bits: tuple[int, ...] = (125, 150, 175)
    arrival_rate_bps: tuple[float, ...] = (250e3,)


@dataclass(frozen=True)
class ValidateSpec:
    """Operating point and threshold grids of a bound-vs-simulation run.

    Powers are set so each UE sees the given mean SNR of its own link.
    """

    mean_snr_su: float = 4.0
    mean_snr_wu: float = 1.5
    delay_thresholds_s: tuple[float, ...] = (0.4e-3, 0.5e-3, 0.6e-3, 0.7e-3, 0.8e-3, 0.9e-3,
                                             1.0e-3, 1.1e-3, 1.2e-3, 1.3e-3)
    aoi_thresholds_s: tuple[float, ...] = (2.5e-3, 2.75e-3, 3.0e-3, 3.25e-3, 3.5e-3, 3.75e-3,
                                           4.0e-3, 4.25e-3, 4.5e-3, 4.75e-3)


def _default_qos() -> dict[Role, QosSpec]:
    q = QosSpec(target_delay_s=1.5e-3, eps_delay=1e-5, target_aoi_s=10e-3, eps_aoi=1e-3)
    return {Role.SU: q, Role.WU: q}


@dataclass(frozen=True)
class Scenario:
    system: SystemConfig = SystemConfig()
    drop_seed: int | None = 1
    gains: dict[Role, float] | None = None
    rates_bps: dict[Role, float] = field(default_factory=dict)
    qos: dict[Role, QosSpec] = field(default_factory=_default_qos)
    sweep: SweepAxes = SweepAxes()
    validate: ValidateSpec = ValidateSpec()
    oma_mode: str = "fixed_duration"
    granularity: str = "attempt"

    def budgets(self) -> tuple[LinkBudget, LinkBudget]:
        """(SU, WU) link budgets, explicit or dropped with ``drop_seed``."""
        if self.gains is not None:
            raw = [LinkBudget(Role.SU, self.gains[Role.SU]), LinkBudget(Role.WU, self.gains[Role.WU])]
        else:
            rng = np.random.default_rng(self.drop_seed)
            raw = [draw_link_budget(self.system, Role.WU, rng) for _ in range(2)]
        return pair_ues(raw)[0]

    def rate(self, role: Role) -> float:
        return self.rates_bps.get(Role(role), self.system.arrival_rate_bps)

    def problem(self, config: SystemConfig | None = None, qos: dict[Role, QosSpec] | None = None,
                scheme: Scheme = Scheme.NOMA) -> AllocationProblem:
        su, wu = self.budgets()
        qos = qos or self.qos
        return AllocationProblem(config or self.system, su, wu, qos[Role.SU], qos[Role.WU],
                                 scheme=scheme, granularity=self.granularity,
                                 rate_su_bps=self.rates_bps.get(Role.SU),
                                 rate_wu_bps=self.rates_bps.get(Role.WU))


# -- parsing ------------------------------------------------------------------

def _line(node) -> int:
    return node.start_mark.line + 1


def _mapping(node, where: str) -> dict[str, tuple[Any, yaml.Node]]:
    if not isinstance(node, yaml.MappingNode):
        raise ScenarioError(f"{where} must be a mapping", _line(node))
    out = {}
    for k, v in node.value:
        key = k.value
        if key in out:
            raise ScenarioError(f"duplicate key {key!r} in {where}", _line(k))
        out[key] = (k, v)
    return out


def _check_keys(m: dict, allowed, where: str) -> None:
    for key, (knode, _) in m.items():
        if key not in allowed:
            raise ScenarioError(f"unknown key {key!r} in {where}; allowed: {', '.join(allowed)}",
                                _line(knode))


def _scalar(node, kind, where: str):
    if not isinstance(node, yaml.ScalarNode):
        raise ScenarioError(f"{where} must be a scalar", _line(node))
    value = yaml.safe_load(node.value) if node.tag != "tag:yaml.org,2002:str" else node.value
    try:
        if kind is int:
            if isinstance(value, bool) or not float(value).is_integer():
                raise ValueError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            x = float(value)
            if not math.isfinite(x):
                raise ValueError
            return x
        if kind is str:
            return str(value)
    except (TypeError, ValueError):
        pass
    raise ScenarioError(f"{where} must be {kind.__name__}, got {node.value!r}", _line(node))


def _list(node, kind, where: str) -> tuple:
    if not isinstance(node, yaml.SequenceNode):
        raise ScenarioError(f"{where} must be a list", _line(node))
    if not node.value:
        raise ScenarioError(f"{where} must not be empty", _line(node))
    return tuple(_scalar(v, kind, where) for v in node.value)


_SYSTEM_TYPES = {f.name: (int if f.type in ("int", int) else float) for f in fields(SystemConfig)}
_QOS_KEYS = ("target_delay_s", "eps_delay", "target_aoi_s", "eps_aoi", "theta_max_hint")
_ROLES = {"su": Role.SU, "wu": Role.WU}


def _per_role(node, where: str) -> dict[Role, tuple]:
    m = _mapping(node, where)
    _check_keys(m, _ROLES, where)
    return {_ROLES[k]: v for k, v in m.items()}


def _build(root) -> Scenario:
    top = _mapping(root, "scenario")
    allowed = REQUIRED + ("traffic", "sweep", "validate", "options")
    _check_keys(top, allowed, "scenario")
    missing = [k for k in REQUIRED if k not in top]
    if missing:
        raise ScenarioError(f"missing required keys: {', '.join(missing)}", _line(root))
    kw: dict[str, Any] = {}

    sysm = _mapping(top["system"][1], "system")
    _check_keys(sysm, _SYSTEM_TYPES, "system")
    sys_kw = {k: _scalar(v, _SYSTEM_TYPES[k], f"system.{k}") for k, (_, v) in sysm.items()}
    try:
        kw["system"] = SystemConfig(**sys_kw)
    except ConfigError as e:
        raise ScenarioError(str(e), _line(top["system"][1])) from None

    links = _mapping(top["links"][1], "links")
    _check_keys(links, ("drop_seed", "gains"), "links")
    if ("drop_seed" in links) == ("gains" in links):
        raise ScenarioError("links needs exactly one of drop_seed, gains", _line(top["links"][1]))
    if "gains" in links:
        g = _per_role(links["gains"][1], "links.gains")
        if set(g) != {Role.SU, Role.WU}:
            raise ScenarioError("links.gains needs su and wu", _line(links["gains"][1]))
        gains = {r: _scalar(v, float, f"links.gains.{r.value.lower()}") for r, (_, v) in g.items()}
        if not (gains[Role.SU] > 0 and gains[Role.WU] > 0):
            raise ScenarioError("gains must be > 0", _line(links["gains"][1]))
        kw["gains"], kw["drop_seed"] = gains, None
    else:
        kw["drop_seed"] = _scalar(links["drop_seed"][1], int, "links.drop_seed")

    if "traffic" in top:
        rates = {}
        for role, (_, v) in _per_role(top["traffic"][1], "traffic").items():
            where = f"traffic.{role.value.lower()}"
            m = _mapping(v, where)
            _check_keys(m, ("arrival_rate_bps",), where)
            if "arrival_rate_bps" in m:
                x = _scalar(m["arrival_rate_bps"][1], float, where + ".arrival_rate_bps")
                if x <= 0:
                    raise ScenarioError("arrival_rate_bps must be > 0", _line(v))
                rates[role] = x
        kw["rates_bps"] = rates

    qos = _default_qos()
    for role, (_, v) in _per_role(top["qos"][1], "qos").items():
        where = f"qos.{role.value.lower()}"
        m = _mapping(v, where)
        _check_keys(m, _QOS_KEYS, where)
        vals = {k: _scalar(n, float, f"{where}.{k}") for k, (_, n) in m.items()}
        try:
            qos[role] = replace(qos[role], **vals)
        except ValueError as e:
            raise ScenarioError(f"{where}: {e}", _line(v)) from None
    kw["qos"] = qos

    if "sweep" in top:
        m = _mapping(top["sweep"][1], "sweep")
        names = [f.name for f in fields(SweepAxes)]
        _check_keys(m, names, "sweep")
        vals = {}
        for k, (_, n) in m.items():
            vals[k] = _list(n, int if k == "ps_bits" else float, f"sweep.{k}")
            if any(x <= 0 for x in vals[k]):
                raise ScenarioError(f"sweep.{k} entries must be > 0", _line(n))
        kw["sweep"] = SweepAxes(**vals)

    if "validate" in top:
        m = _mapping(top["validate"][1], "validate")
        names = [f.name for f in fields(ValidateSpec)]
        _check_keys(m, names, "validate")
        vals = {}
        for k, (_, n) in m.items():
            vals[k] = _list(n, float, f"validate.{k}") if k.endswith("_s") else \
                _scalar(n, float, f"validate.{k}")
        kw["validate"] = ValidateSpec(**vals)

    if "options" in top:
        m = _mapping(top["options"][1], "options")
        _check_keys(m, ("oma_mode", "granularity"), "options")
        choices = {"oma_mode": ("fixed_duration", "fixed_blocklength"),
                   "granularity": ("attempt", "slot")}
        for k, (_, n) in m.items():
            val = _scalar(n, str, f"options.{k}")
            if val not in choices[k]:
                raise ScenarioError(f"options.{k} must be one of {choices[k]}", _line(n))
            kw[k] = val
    return Scenario(**kw)


def parse_text(text: str) -> Scenario:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioError(f"YAML syntax: {getattr(e, 'problem', e)}",
                            mark.line + 1 if mark else None) from None
    if root is None:
        raise ScenarioError(f"empty scenario; required keys: {', '.join(REQUIRED)}")
    return _build(root)


def parse_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"cannot read {path}: {e.strerror}") from None
    return parse_text(text)


def default_template() -> str:
    return resources.files("snc_noma").joinpath("default_scenario.yaml").read_text(encoding="utf-8")
