"""Monte-Carlo simulation of the per-UE FCFS/ARQ short-packet queues.

Each UE has a Poisson packet source and an infinite FCFS buffer. The
head-of-line packet is sent in back-to-back attempts of one attempt duration;
every attempt sees a fresh Rayleigh draw (the SU also a fresh draw of the WU
interference) and succeeds with probability one minus the FBC block error.
A packet leaves at the end of its first successful attempt.

Because attempts are i.i.d. and only consumed while the server is busy, the
attempt counts of consecutive packets are read off one stream of attempt
outcomes, and departures follow from the Lindley recursion in closed form.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .channel import (ConfigError, LinkBudget, Role, SystemConfig, fbc_error, noise_power,
                      sinr_su, sinr_wu)

WARMUP_PACKETS = 10_000
# Delays of packets that find the server idle are exact multiples of the
# attempt duration; values within TIE_TOL_S of a threshold count as ties
# (not exceeding) so absolute-time rounding cannot flip them.
TIE_TOL_S = 1e-9
WILSON_Z = 1.959963984540054


class InsufficientSamples(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PacketRecord:
    arrival_time_s: float
    service_start_s: float
    departure_time_s: float
    attempts: int
    prev_arrival_time_s: float


@dataclass
class PacketTrace:
    """Column-wise packet records of one UE."""

    arrival: np.ndarray
    service_start: np.ndarray
    departure: np.ndarray
    attempts: np.ndarray
    prev_arrival: np.ndarray

    def __len__(self) -> int:
        return len(self.arrival)

    def delay(self) -> np.ndarray:
        return self.departure - self.arrival

    def wait(self) -> np.ndarray:
        return self.service_start - self.arrival

    def peak_aoi(self) -> np.ndarray:
        """Residency plus the preceding inter-arrival gap; packets without a predecessor dropped."""
        ok = ~np.isnan(self.prev_arrival)
        return (self.departure - self.prev_arrival)[ok]

    def records(self) -> Iterator[PacketRecord]:
        for i in range(len(self)):
            yield PacketRecord(float(self.arrival[i]), float(self.service_start[i]),
                               float(self.departure[i]), int(self.attempts[i]),
                               float(self.prev_arrival[i]))

    @classmethod
    def from_records(cls, records: Iterable[PacketRecord]) -> "PacketTrace":
        recs = list(records)
        col = lambda name, dt=float: np.array([getattr(r, name) for r in recs], dtype=dt)
        return cls(col("arrival_time_s"), col("service_start_s"), col("departure_time_s"),
                   col("attempts", np.int64), col("prev_arrival_time_s"))


@dataclass(frozen=True)
class TailEstimate:
    threshold_s: float
    count_exceed: int
    count_total: int

    @property
    def p_hat(self) -> float:
        return self.count_exceed / self.count_total

    @property
    def wilson_hi(self) -> float:
        return wilson_upper(self.count_exceed, self.count_total)


def wilson_upper(k: int, n: int, z: float = WILSON_Z) -> float:
    """Upper end of the Wilson score interval for k successes in n trials."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = k / n
    z2 = z * z
    centre = p + z2 / (2 * n)
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    return min(1.0, (centre + half) / (1 + z2 / n))


def _split_budgets(budgets: Sequence[LinkBudget]) -> tuple[LinkBudget, LinkBudget]:
    by_role = {Role(b.role): b for b in budgets}
    if set(by_role) != {Role.SU, Role.WU}:
        raise ValueError("need exactly one SU and one WU budget")
    return by_role[Role.SU], by_role[Role.WU]


def _poisson_arrivals(rate_per_slot: float, horizon_slots: int, slot_s: float,
                      rng: np.random.Generator) -> np.ndarray:
    counts = rng.poisson(rate_per_slot, horizon_slots)
    slots = np.repeat(np.arange(horizon_slots, dtype=float), counts)
    return np.sort((slots + rng.random(slots.size)) * slot_s)


def _attempt_counts(n: int, draw: Callable[[int], np.ndarray], max_failures: int = 10**8) -> np.ndarray:
    """Attempts used by each of ``n`` consecutive packets, from a stream of outcomes."""
    out = np.empty(n, dtype=np.int64)
    filled = 0
    carry = 0
    while filled < n:
        chunk = max(4096, 2 * (n - filled))
        hits = np.flatnonzero(draw(chunk))
        if hits.size == 0:
            carry += chunk
            if carry > max_failures:
                raise SimulationError(f"no successful attempt in {carry} draws")
            continue
        gaps = np.diff(hits, prepend=-1)
        gaps[0] += carry
        take = min(n - filled, gaps.size)
        out[filled:filled + take] = gaps[:take]
        filled += take
        carry = chunk - 1 - hits[-1]
    return out


def _fcfs(arrival: np.ndarray, service: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Departures and service starts of a single FCFS server.

    D_i = max(a_i, D_{i-1}) + s_i unrolls to D_i = C_i + max_{j<=i}(a_j - C_{j-1}).
    """
    csum = np.cumsum(service)
    before = csum - service
    closed = csum + np.maximum.accumulate(arrival - before)
    # re-anchor on the previous departure so arrival <= start holds exactly
    start = np.maximum(arrival, np.concatenate(([-np.inf], closed[:-1])))
    return start + service, start


def simulate_queue(arrival: np.ndarray, draw_success: Callable[[int], np.ndarray],
                   attempt_s: float, warmup_packets: int = WARMUP_PACKETS) -> PacketTrace:
    n = arrival.size
    if n == 0:
        empty = np.empty(0)
        return PacketTrace(empty, empty, empty, np.empty(0, dtype=np.int64), empty)
    attempts = _attempt_counts(n, draw_success)
    departure, start = _fcfs(arrival, attempts * attempt_s)
    prev = np.concatenate(([np.nan], arrival[:-1]))
    keep = slice(min(warmup_packets, n), None)
    return PacketTrace(arrival[keep], start[keep], departure[keep], attempts[keep], prev[keep])


def run_replication(config: SystemConfig, budgets: Sequence[LinkBudget],
                    powers: tuple[float, float], horizon_slots: int, seed: int,
                    warmup_packets: int = WARMUP_PACKETS,
                    error_fn: Callable[[np.ndarray], np.ndarray] | None = None,
                    rates_bps: tuple[float, float] | None = None,
                    ) -> dict[Role, PacketTrace]:
    """Simulate both UEs of a NOMA pair for ``horizon_slots`` slots.

    ``powers`` is (p_w, p_s) in W. ``error_fn`` overrides the FBC block error
    as a function of the instantaneous SINR. ``rates_bps`` gives per-UE
    arrival rates (WU, SU); by default both use ``config.arrival_rate_bps``.
    """
    if config.attempts_per_slot < 1:
        raise ConfigError("no transmission attempt fits in a slot")
    su, wu = _split_budgets(budgets)
    p_w, p_s = powers
    sigma2 = noise_power(config)
    code = config.code()
    err = error_fn or (lambda g: fbc_error(code, g))
    rates = rates_bps or (config.arrival_rate_bps, config.arrival_rate_bps)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]

    def drawer(role: Role, rng: np.random.Generator):
        def draw(m: int) -> np.ndarray:
            h = rng.standard_exponential(m)
            if role == Role.WU:
                g = sinr_wu(p_w, wu.large_scale_gain * h, sigma2)
            else:
                h_i = rng.standard_exponential(m)
                g = sinr_su(p_s, su.large_scale_gain * h, p_w, wu.large_scale_gain * h_i, sigma2)
            return rng.random(m) >= err(g)
        return draw

    out = {}
    for role, rng, rate in zip((Role.WU, Role.SU), streams, rates):
        rate_per_slot = rate / config.ps_bits * config.slot_s
        arrival = _poisson_arrivals(rate_per_slot, horizon_slots, config.slot_s, rng)
        out[role] = simulate_queue(arrival, drawer(role, rng), config.attempt_duration_s,
                                   warmup_packets)
    return out


def _exceed_counts(values: np.ndarray, thresholds: Sequence[float]) -> list[int]:
    ordered = np.sort(values)
    idx = np.searchsorted(ordered, np.asarray(thresholds, dtype=float) + TIE_TOL_S, side="right")
    return [int(ordered.size - i) for i in idx]


def _estimate(values: np.ndarray, threshold: float, min_samples: int) -> TailEstimate:
    if values.size < min_samples:
        raise InsufficientSamples(f"{values.size} samples, need {min_samples}")
    return TailEstimate(float(threshold), _exceed_counts(values, [threshold])[0], int(values.size))


def estimate_sdvp(records, w_s: float, min_samples: int = WARMUP_PACKETS) -> TailEstimate:
    """Empirical P(delay > w_s) with its Wilson upper limit."""
    trace = records if isinstance(records, PacketTrace) else PacketTrace.from_records(records)
    return _estimate(trace.delay(), w_s, min_samples)


def estimate_savp(records, d_s: float, min_samples: int = WARMUP_PACKETS) -> TailEstimate:
    """Empirical P(peak AoI > d_s)."""
    trace = records if isinstance(records, PacketTrace) else PacketTrace.from_records(records)
    return _estimate(trace.peak_aoi(), d_s, min_samples)


def process_aoi_tail(records, d_s: float) -> float:
    """Fraction of time the AoI process exceeds ``d_s``.

    Measured from the first to the last departure. Between departures i-1
    and i the age is ``t - arrival[i-1]``. This is the time-average view of
    freshness, kept for comparison with the per-packet peak statistic.
    """
    trace = records if isinstance(records, PacketTrace) else PacketTrace.from_records(records)
    if len(trace) < 2:
        raise InsufficientSamples("need at least two departures")
    d0, d1 = trace.departure[:-1], trace.departure[1:]
    start = np.maximum(d0, trace.arrival[:-1] + d_s)
    above = np.clip(d1 - start, 0.0, None).sum()
    return float(above / (trace.departure[-1] - trace.departure[0]))


# -- campaigns ----------------------------------------------------------------

@dataclass
class Campaign:
    base_seed: int
    replications: int
    estimates: dict[tuple[Role, str], list[TailEstimate]]

    def rows(self) -> list[dict]:
        rows = []
        for (role, metric), ests in self.estimates.items():
            for e in ests:
                rows.append({"role": role.value, "threshold_s": e.threshold_s, "metric": metric,
                             "count_exceed": e.count_exceed, "count_total": e.count_total,
                             "p_hat": e.p_hat, "wilson_hi": e.wilson_hi, "seed": self.base_seed})
        return rows


def _replicate(args) -> dict[tuple[str, str], tuple[list[int], int]]:
    config, budgets, powers, horizon, seed, warmup, thresholds, rates = args
    traces = run_replication(config, budgets, powers, horizon, seed, warmup, rates_bps=rates)
    out = {}
    for role, trace in traces.items():
        for metric, values in (("sdvp", trace.delay()), ("savp", trace.peak_aoi())):
            out[(role.value, metric)] = (_exceed_counts(values, thresholds[metric]),
                                        int(values.size))
    return out


def run_campaign(config: SystemConfig, budgets: Sequence[LinkBudget], powers: tuple[float, float],
                 n_packets_target: int, n_workers: int = 1, base_seed: int = 0,
                 delay_thresholds: Sequence[float] = (), aoi_thresholds: Sequence[float] = (),
                 packets_per_replication: int = 1_000_000,
                 warmup_packets: int = WARMUP_PACKETS,
                 rates_bps: tuple[float, float] | None = None) -> Campaign:
    """Independent replications with seeds ``base_seed + r``, merged by count addition.

    The merge is a sum of integers over replications taken in index order, so
    the result does not depend on ``n_workers``.
    """
    if n_packets_target < 1:
        raise ValueError("n_packets_target must be positive")
    per_rep = min(packets_per_replication, n_packets_target)
    reps = math.ceil(n_packets_target / per_rep)
    rates = rates_bps or (config.arrival_rate_bps, config.arrival_rate_bps)
    rate_per_slot = min(rates) / config.ps_bits * config.slot_s
    if rate_per_slot <= 0:
        raise ValueError("arrival rate is zero")
    horizon = math.ceil((per_rep + warmup_packets) / rate_per_slot)
    thresholds = {"sdvp": [float(x) for x in delay_thresholds],
                  "savp": [float(x) for x in aoi_thresholds]}
    jobs = [(config, tuple(budgets), tuple(powers), horizon, base_seed + r, warmup_packets,
             thresholds, rates) for r in range(reps)]
    if n_workers <= 1 or reps == 1:
        parts = [_replicate(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(_replicate, jobs))

    estimates: dict[tuple[Role, str], list[TailEstimate]] = {}
    for role in (Role.WU, Role.SU):
        for metric in ("sdvp", "savp"):
            key = (role.value, metric)
            total = sum(p[key][1] for p in parts)
            counts = [sum(p[key][0][i] for p in parts) for i in range(len(thresholds[metric]))]
            estimates[(role, metric)] = [TailEstimate(x, c, total)
                                         for x, c in zip(thresholds[metric], counts)]
    return Campaign(base_seed, reps, estimates)


def merge_estimates(parts: Iterable[TailEstimate]) -> TailEstimate:
    parts = list(parts)
    if len({p.threshold_s for p in parts}) != 1:
        raise ValueError("can only merge estimates at one threshold")
    return TailEstimate(parts[0].threshold_s, sum(p.count_exceed for p in parts),
                        sum(p.count_total for p in parts))
