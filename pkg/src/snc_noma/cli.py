"""Command-line entry point: bound curves, simulation validation and power sweeps.

Exit codes: 0 success, 2 infeasible allocation, 3 configuration error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import report
from .channel import ConfigError, Role, noise_power, sinr_model
from .opt import AllocationResult, Scheme, allocate, allocate_oma, relative_saving
from .scenario import Scenario, default_template, parse_scenario
from .sim import run_campaign
from .snc import build_models, ub_savp, ub_sdvp_seconds

EXIT_OK, EXIT_INFEASIBLE, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(ConfigError):
    pass


def parse_targets(text: str) -> list[float]:
    """``lo:step:hi`` (inclusive) or a comma-separated list, in seconds."""
    try:
        if ":" in text:
            lo, step, hi = (float(x) for x in text.split(":"))
            if not (step > 0 and hi >= lo):
                raise ValueError
            n = int(math.floor((hi - lo) / step + 1e-9))
            return [float(x) for x in np.round(lo + step * np.arange(n + 1), 15)]
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"bad --targets {text!r}; expected lo:step:hi") from None


# -- operating point ----------------------------------------------------------

def operating_powers(sc: Scenario) -> tuple[float, float]:
    """(p_w, p_s) giving the validation mean SNRs on the scenario's links."""
    su, wu = sc.budgets()
    s2 = noise_power(sc.system)
    return (sc.validate.mean_snr_wu * s2 / wu.large_scale_gain,
            sc.validate.mean_snr_su * s2 / su.large_scale_gain)


def role_models(sc: Scenario, role: Role, powers: tuple[float, float]):
    su, wu = sc.budgets()
    p_w, p_s = powers
    cfg = replace(sc.system, arrival_rate_bps=sc.rate(role))
    s2 = noise_power(cfg)
    if role == Role.WU:
        m = sinr_model(role, p_w, wu.large_scale_gain, s2)
    else:
        m = sinr_model(role, p_s, su.large_scale_gain, s2, p_w, wu.large_scale_gain)
    return build_models(cfg, m, sc.granularity)


def bound_value(sc: Scenario, role: Role, metric: str, target_s: float, powers):
    traffic, svc = role_models(sc, role, powers)
    if metric == "sdvp":
        return ub_sdvp_seconds(target_s, traffic, svc, sc.qos[role].theta_max_hint)
    return ub_savp(target_s, traffic, svc)


# -- commands -----------------------------------------------------------------

def cmd_bound(sc: Scenario, metric: str, targets=None, powers=None) -> list[dict]:
    powers = powers or operating_powers(sc)
    if targets is None:
        targets = (sc.validate.delay_thresholds_s if metric == "sdvp"
                   else sc.validate.aoi_thresholds_s)
    rows = []
    for role in (Role.WU, Role.SU):
        for t in targets:
            b = bound_value(sc, role, metric, t, powers)
            rows.append({"role": role.value, "metric": metric, "target_s": float(t),
                         "value": b.value, "theta_star": b.theta_star, "stable": b.stable,
                         "kernel_evals": b.kernel_evals, "p_w": powers[0], "p_s": powers[1]})
    return rows


def cmd_validate(sc: Scenario, samples: int, seed: int, workers: int = 1,
                 replication_size: int = 1_000_000, metric: str | None = None,
                 targets=None) -> list[dict]:
    if samples < 1:
        raise UsageError("--samples must be positive")
    powers = operating_powers(sc)
    dth = list(sc.validate.delay_thresholds_s)
    ath = list(sc.validate.aoi_thresholds_s)
    if targets is not None:
        if metric in (None, "sdvp"):
            dth = list(targets)
        if metric in (None, "savp"):
            ath = list(targets)
    su, wu = sc.budgets()
    camp = run_campaign(sc.system, (su, wu), powers, samples, workers, seed, dth, ath,
                        packets_per_replication=replication_size,
                        rates_bps=(sc.rate(Role.WU), sc.rate(Role.SU)))
    rows = []
    for role in (Role.WU, Role.SU):
        for m in ("sdvp", "savp"):
            if metric not in (None, m):
                continue
            for e in camp.estimates[(role, m)]:
                b = bound_value(sc, role, m, e.threshold_s, powers)
                rows.append({"role": role.value, "metric": m, "threshold_s": e.threshold_s,
                             "ub": b.value, "stable": b.stable, "count_exceed": e.count_exceed,
                             "count_total": e.count_total, "p_hat": e.p_hat,
                             "wilson_hi": e.wilson_hi, "dominates": b.value >= e.wilson_hi,
                             "seed": seed})
    return rows


def _opt_rows(res: AllocationResult, kind: str, target: float, ps: int, rate: float) -> list[dict]:
    rows = []
    for role, tag in ((Role.WU, "w"), (Role.SU, "s")):
        p = res.p_w_star if role == Role.WU else res.p_s_star
        rows.append({"scheme": res.scheme.value, "role": role.value, "target_kind": kind,
                     "target_s": float(target), "p_star_w": p,
                     "status": res.status.value,
                     "binding": ";".join(sorted(b for b in res.binding if b.endswith(tag))),
                     "sdvp": res.bounds_at_opt.get(f"sdvp_{tag}"),
                     "savp": res.bounds_at_opt.get(f"savp_{tag}"),
                     "iters": res.iterations.get(role.value), "ps_bits": ps,
                     "arrival_rate_bps": rate})
    return rows


def _solve_point(args) -> list[dict]:
    sc, kind, target, ps, rate = args
    cfg = replace(sc.system, ps_bits=ps, arrival_rate_bps=rate)
    qos = dict(sc.qos)
    if kind != "qos":
        key = "target_delay_s" if kind == "delay" else "target_aoi_s"
        qos = {r: replace(q, **{key: target}) for r, q in qos.items()}
    prob = sc.problem(cfg, qos)
    noma = allocate(prob)
    oma = allocate_oma(prob, sc.oma_mode)
    rows_n = _opt_rows(noma, kind, target, ps, rate)
    rows_o = _opt_rows(oma, kind, target, ps, rate)
    for rn, ro in zip(rows_n, rows_o):
        rn["saving"] = relative_saving(ro["p_star_w"], rn["p_star_w"])
    return rows_n + rows_o


def cmd_sweep(sc: Scenario, axis: str = "both", targets=None, workers: int = 1) -> list[dict]:
    jobs = []
    for kind in (("delay", "aoi") if axis == "both" else (axis,)):
        grid = targets if targets is not None else (
            sc.sweep.target_delay_s if kind == "delay" else sc.sweep.target_aoi_s)
        for ps in sc.sweep.ps_bits:
            for rate in sc.sweep.arrival_rate_bps:
                jobs.extend((sc, kind, float(t), ps, rate) for t in grid)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_solve_point, jobs))
    else:
        parts = [_solve_point(j) for j in jobs]
    return [r for p in parts for r in p]


def cmd_optimize(sc: Scenario) -> list[dict]:
    """NOMA and OMA allocations at the scenario's own QoS targets.

    ``target_kind`` is ``qos`` and ``target_s`` the role's target delay.
    """
    rows = _solve_point((sc, "qos", math.nan, sc.system.ps_bits, sc.system.arrival_rate_bps))
    for r in rows:
        r["target_s"] = sc.qos[Role(r["role"])].target_delay_s
    return rows


# -- argument handling --------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="snc-noma",
                description="Delay and peak-AoI tail bounds for an uplink NOMA pair, checked "
                            "against simulation and used for power allocation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, metric=False, targets=False):
        sp.add_argument("--config", type=Path, help="scenario YAML (default: built-in template)")
        sp.add_argument("--out", type=Path, help="CSV path; a plot script and PNG are written next to it")
        sp.add_argument("--no-plot", action="store_true", help="skip the PNG and plot script")
        if metric:
            sp.add_argument("--metric", choices=("sdvp", "savp"))
        if targets:
            sp.add_argument("--targets", type=parse_targets, help="lo:step:hi in seconds")

    sp = sub.add_parser("bound", help="upper-bound curves at the validation operating point")
    common(sp, metric=True, targets=True)
    sp.add_argument("--powers", help="p_w,p_s in W (default: from validation mean SNRs)")

    sp = sub.add_parser("validate", help="bounds against Monte-Carlo tail estimates")
    common(sp, metric=True, targets=True)
    sp.add_argument("--samples", type=int, default=1_000_000, help="packets per UE")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--replication-size", type=int, default=1_000_000,
                    help="packets per independent replication")

    sp = sub.add_parser("optimize", help="NOMA and OMA minimum powers at the scenario QoS")
    common(sp)

    sp = sub.add_parser("sweep", help="NOMA and OMA minimum powers over target grids")
    common(sp, targets=True)
    sp.add_argument("--axis", choices=("delay", "aoi", "both"), default="both")
    sp.add_argument("--workers", type=int, default=1)

    sub.add_parser("template", help="print the default scenario file")
    return p


def _emit(args, fields, rows, kind) -> None:
    if args.out is None:
        sys.stdout.write(report.csv_text(fields, rows))
        return
    path = report.write_csv(args.out, fields, rows)
    if not args.no_plot:
        png = path.with_suffix(".png")
        report.write_plot_script(path, kind, png)
        report.render(path, kind, png)


def _summarize_validate(rows) -> str:
    lines = []
    for role in ("WU", "SU"):
        for metric in ("sdvp", "savp"):
            sel = [r for r in rows if r["role"] == role and r["metric"] == metric]
            if not sel:
                continue
            checked = [r for r in sel if r["p_hat"] >= 1e-4]
            dom = all(r["dominates"] for r in checked)
            xs, ub, sim = report.slope_points(sel)
            su, ss = report.log_slope(xs, ub), report.log_slope(xs, sim)
            rel = abs(su - ss) / abs(ss) if ss else math.nan
            lines.append(f"{role} {metric}: dominates={dom} on {len(checked)} points; "
                         f"slope bound={su:.4g} sim={ss:.4g} rel.diff={rel:.3f} ({len(xs)} points)")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "template":
        sys.stdout.write(default_template())
        return EXIT_OK
    try:
        sc = parse_scenario(args.config) if args.config else Scenario()
        if args.command == "bound":
            powers = None
            if args.powers:
                try:
                    powers = tuple(float(x) for x in args.powers.split(","))
                    assert len(powers) == 2
                except (ValueError, AssertionError):
                    raise UsageError("--powers expects p_w,p_s") from None
            rows = []
            for m in ([args.metric] if args.metric else ["sdvp", "savp"]):
                rows += cmd_bound(sc, m, args.targets, powers)
            _emit(args, report.BOUND_FIELDS, rows, "bound")
        elif args.command == "validate":
            rows = cmd_validate(sc, args.samples, args.seed, args.workers,
                                args.replication_size, args.metric, args.targets)
            _emit(args, report.VALIDATE_FIELDS, rows, "validate")
            print(_summarize_validate(rows), file=sys.stderr)
        elif args.command == "optimize":
            rows = cmd_optimize(sc)
            _emit(args, report.OPT_FIELDS, rows, "optimize")
            if any(r["status"] == "Infeasible" for r in rows if r["scheme"] == Scheme.NOMA.value):
                return EXIT_INFEASIBLE
        elif args.command == "sweep":
            rows = cmd_sweep(sc, args.axis, args.targets, args.workers)
            _emit(args, report.OPT_FIELDS, rows, "sweep")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
