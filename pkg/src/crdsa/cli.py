"""Command line front end.

Every subcommand reads a ``key = value`` config (``--config``), applies
per-setting flag overrides (``--p-r 0.4``, ``--M inf``, ...), writes its
tables as comma-separated files into ``--out`` and records a
``manifest.json`` next to them.  Analytic subcommands reuse cached
kernels; missing kernels are estimated unless ``--no-compute`` is given.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cache import cached_plr_curve, cached_q_table, default_cache_dir, key_digest
from .closedloop import TRACE_FIELDS, measure_fet, run, sweep_threshold
from .config import RunConfig, convert, format_config, load_config
from .delay import DelayModel, delay_cdf, delay_mean, delay_mean_little
from .equilibrium import LoadLine, classify, contour, find_equilibria, saturates_at_infinity
from .errors import CrdsaError, InvalidConfigurationError
from .fet import (
    FiniteChain,
    InfiniteChain,
    adaptive_delta,
    default_n_b_abs,
    fet_coverage,
    fet_distribution,
    reduced_matrix,
)
from .montecarlo import default_plr_grid, default_plr_runs

EXIT_IO = 5


class Run:
    """Shared state of one invocation: config, paths, kernel log and outputs."""

    def __init__(self, subcommand: str, cfg: RunConfig, args: argparse.Namespace):
        self.subcommand = subcommand
        self.cfg = cfg
        self.args = args
        self.out = Path(args.out or f"crdsa-{subcommand}")
        self.cache_dir = Path(args.cache_dir) if args.cache_dir else default_cache_dir()
        self.workers = args.workers if args.workers else (os.cpu_count() or 1)
        self.compute = not args.no_compute
        self.config_text = format_config(cfg)
        self.config_sha = hashlib.sha256(self.config_text.encode()).hexdigest()
        self.kernels: list[dict] = []
        self.outputs: list[str] = []
        self.out.mkdir(parents=True, exist_ok=True)

    def comment(self) -> str:
        return (
            f"crdsa {__version__} {self.subcommand}; seed={self.cfg.seed}; "
            f"manifest=manifest.json; config-sha256={self.config_sha[:16]}"
        )

    def table(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        buf.write(f"# {self.comment()}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
        path = self.out / name
        path.write_text(buf.getvalue())
        self.outputs.append(name)
        return path

    def plr_curve(self):
        cfg = self.cfg
        grid = default_plr_grid(cfg.n_slots, cfg.g_max)
        runs = default_plr_runs(grid, cfg.n_slots, cfg.plr_runs, cfg.plr_tail_runs)
        curve, hit = cached_plr_curve(
            self.cache_dir, cfg.kernel_scenario(), grid, runs, cfg.seed, self.compute, self.workers
        )
        self.kernels.append({"kind": "plr", "key": key_digest(curve.key()), "cache_hit": hit})
        return curve

    def q_table(self, n_max: int):
        cfg = self.cfg
        table, hit = cached_q_table(
            self.cache_dir, cfg.kernel_scenario(), n_max, cfg.q_runs, cfg.seed, self.compute, self.workers
        )
        self.kernels.append({"kind": "q", "key": key_digest(table.key()), "n_max": n_max, "cache_hit": hit})
        return table

    def write_manifest(self) -> Path:
        manifest = {
            "tool": "crdsa",
            "version": __version__,
            "subcommand": self.subcommand,
            "seed": self.cfg.seed,
            "parameters": dataclasses.asdict(self.cfg),
            "config_text": self.config_text,
            "options": {"simulate": bool(getattr(self.args, "simulate", False))},
            "kernels": self.kernels,
            "outputs": [
                {"file": name, "sha256": hashlib.sha256((self.out / name).read_bytes()).hexdigest()}
                for name in self.outputs
            ],
        }
        path = self.out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return v.item()
    return "" if v is None else v


def _load_line(cfg: RunConfig) -> LoadLine:
    if cfg.M is None:
        return LoadLine.infinite(cfg.lam, cfg.n_slots)
    return LoadLine.finite(cfg.M, cfg.p0, cfg.n_slots)


def _analysis(curve, cfg: RunConfig, p_r: float):
    line = _load_line(cfg)
    cont = contour(curve, p_r, cfg.n_slots)
    points = find_equilibria(cont, line)
    return cont, line, classify(points, line, saturates_at_infinity(cont, line))


def _chain(cfg: RunConfig):
    if cfg.M is None:
        return InfiniteChain(cfg.lam, cfg.p_r)
    return FiniteChain(cfg.M, cfg.p0, cfg.p_r)


def cmd_kernels(r: Run) -> None:
    curve = r.plr_curve()
    r.table(
        "plr.csv",
        ["g_in", "plr", "plr_monotone", "n_runs", "std_err"],
        zip(curve.g_in, curve.plr, curve.monotone_plr(), curve.n_runs, curve.std_err),
    )
    print(f"PLR curve: {curve.g_in.size} loads, cache {'hit' if r.kernels[-1]['cache_hit'] else 'stored'}")
    if r.cfg.q_n_max is not None:
        table = r.q_table(r.cfg.q_n_max)
        r.table(
            "q_plr.csv",
            ["n", "plr", "n_runs"],
            ((n, table.plr(n), table.n_runs[n]) for n in range(table.n_max + 1)),
        )
        print(f"q table: n <= {table.n_max}, cache {'hit' if r.kernels[-1]['cache_hit'] else 'stored'}")


def cmd_stability(r: Run) -> None:
    cfg = r.cfg
    curve = r.plr_curve()
    cont, line, verdict = _analysis(curve, cfg, cfg.p_r)
    r.table(
        "contour.csv",
        ["g_in", "g_t", "n_b", "load_line_g_t"],
        zip(cont.g_in, cont.g_t, cont.n_b, line.g_t(cont.n_b)),
    )
    r.table(
        "equilibria.csv",
        ["g_in", "g_t", "n_b", "kind"],
        ((p.g_in, p.g_t, p.n_b, p.kind.value) for p in verdict.points),
    )
    op = verdict.operating_point
    nbu = verdict.unstable_point
    r.table(
        "stability.csv",
        ["verdict", "diverges", "operating_g_t", "operating_n_b", "unstable_n_b"],
        [(verdict.verdict.value, verdict.diverges, op and op.g_t, op and op.n_b, nbu and nbu.n_b)],
    )
    print(f"verdict: {verdict.verdict.value}" + (" (backlog diverges)" if verdict.diverges else ""))
    for p in verdict.points:
        print(f"  {p.kind.value:16s} G_T={p.g_t:.4f} N_B={p.n_b:.2f}")


def _resting_point(verdict):
    """Operating point, or the saturation point of an overloaded channel."""
    if verdict.operating_point is not None:
        return verdict.operating_point
    return next((p for p in verdict.points if p.is_stable), None)


def cmd_delay(r: Run) -> None:
    cfg = r.cfg
    curve = r.plr_curve()
    p_rs = cfg.p_r_list or (cfg.p_r,)
    rows, models = [], []
    for p_r in p_rs:
        _, _, verdict = _analysis(curve, cfg, p_r)
        point = _resting_point(verdict)
        if point is None:
            raise InvalidConfigurationError(f"p_r={p_r}: no stable equilibrium, delay is unbounded")
        plr = float(curve.plr_at(point.g_in))
        model = DelayModel(plr, p_r, cfg.n_slots)
        models.append(model)
        row = [p_r, verdict.verdict.value, point.g_t, point.n_b, plr, delay_mean(model),
               delay_mean_little(point.n_b, point.g_t, cfg.n_slots)]
        if r.args.simulate:
            st = run(cfg.scenario(p_r), cfg.policy_config(), cfg.frames, cfg.warmup, cfg.seed)
            row += [st.mean_delay, st.throughput, st.mean_backlog]
        rows.append(row)
        print(f"p_r={p_r}: PLR={plr:.5f} E[D]={row[5]:.3f}" + (f" simulated={row[7]:.3f}" if r.args.simulate else ""))
    header = ["p_r", "verdict", "g_t", "n_b", "plr", "delay_mean", "delay_little"]
    if r.args.simulate:
        header += ["sim_delay", "sim_throughput", "sim_backlog"]
    r.table("delay.csv", header, rows)
    r.table(
        "delay_cdf.csv",
        ["f"] + [f"cdf_p_r={m.p_r!r}" for m in models],
        ([f] + [delay_cdf(m, f) for m in models] for f in range(1, cfg.f_max + 1)),
    )


def cmd_fet(r: Run) -> None:
    cfg = r.cfg
    curve = r.plr_curve()
    _, _, verdict = _analysis(curve, cfg, cfg.p_r)
    unstable = verdict.unstable_point
    if unstable is None:
        raise InvalidConfigurationError("the channel has no unstable equilibrium; the first exit time is undefined")
    n_b_u = unstable.n_b
    chain = _chain(cfg)
    q = r.q_table(cfg.q_n_max if cfg.q_n_max is not None else fet_coverage(chain, n_b_u, cfg.delta))
    empirical = None
    if cfg.fet_frames > 0:
        empirical = measure_fet(cfg.scenario(), cfg.fet_frames, cfg.seed, math.ceil(n_b_u))
    rows, cdfs = [], []
    for delta in cfg.delta:
        n_b_abs = default_n_b_abs(n_b_u, delta)
        res = fet_distribution(reduced_matrix(chain, n_b_abs, q, n_b_u), horizon=cfg.fet_horizon, tol=cfg.fet_tol)
        cdfs.append(res.cdf)
        row = [delta, n_b_abs, res.mean, res.truncation_residual, res.lower_bound]
        if empirical is not None:
            row += [empirical.mean, empirical.std_err, len(empirical.samples)]
        rows.append(row)
        print(f"delta={delta} N_B^abs={n_b_abs}: mean FET {res.mean:.1f} frames")
    header = ["delta", "n_b_abs", "fet_mean", "truncation_residual", "lower_bound"]
    if empirical is not None:
        header += ["empirical_mean", "empirical_std_err", "empirical_samples"]
        print(f"empirical FET: {empirical.mean:.1f} +- {empirical.std_err:.1f} ({len(empirical.samples)} exits)")
    r.table("fet.csv", header, rows)
    length = max(c.size for c in cdfs)
    padded = [np.concatenate((c, np.full(length - c.size, c[-1] if c.size else 0.0))) for c in cdfs]
    r.table(
        "fet_cdf.csv",
        ["frame"] + [f"cdf_delta={d}" for d in cfg.delta],
        ([k + 1] + [c[k] for c in padded] for k in range(length)),
    )
    suggested = adaptive_delta(chain, q, n_b_u)
    r.table("fet_adaptive.csv", ["n_b_unstable", "adaptive_delta"], [(n_b_u, suggested)])
    print(f"N_B^U={n_b_u:.2f}; adaptive delta {suggested if suggested is not None else 'not found'}")


def cmd_sweep(r: Run) -> None:
    cfg = r.cfg
    if cfg.policy == "none" or not cfg.n_hat_grid:
        raise InvalidConfigurationError("sweep needs policy = icp|rcp and a non-empty n_hat_grid")
    policy = dataclasses.replace(cfg.policy_config(), n_hat=cfg.n_hat_grid[0])
    rows = sweep_threshold(cfg.scenario(), policy, cfg.n_hat_grid, cfg.frames, cfg.warmup, cfg.seed)
    r.table(
        "sweep.csv",
        ["n_hat", "throughput", "mean_delay", "critical_fraction", "rejected", "mean_backlog", "diverged"],
        (dataclasses.astuple(row) for row in rows),
    )
    for row in rows:
        print(f"n_hat={row.n_hat}: throughput {row.throughput:.4f} delay {row.mean_delay:.3f}")


def cmd_simulate(r: Run) -> None:
    cfg = r.cfg
    st = run(cfg.scenario(), cfg.policy_config(), cfg.frames, cfg.warmup, cfg.seed)
    r.table(
        "trace.csv",
        ["frame"] + list(TRACE_FIELDS),
        ([k] + [st.trace[name][k] for name in TRACE_FIELDS] for k in range(st.trace["backlog"].size)),
    )
    summary = [
        ("throughput", st.throughput),
        ("mean_delay", st.mean_delay),
        ("mean_backlog", st.mean_backlog),
        ("fresh_load", st.fresh_load),
        ("critical_time_fraction", st.critical_time_fraction),
        ("rejected_count", st.rejected_count),
        ("frames_measured", st.frames_measured),
        ("packets_delivered", st.packets_delivered),
        ("diverged", st.diverged),
    ]
    r.table("summary.csv", ["quantity", "value"], summary)
    for name, value in summary:
        print(f"{name}: {value}")


COMMANDS = {
    "kernels": (cmd_kernels, "estimate and cache the PLR curve (and q table when q_n_max is set)"),
    "stability": (cmd_stability, "equilibrium contour, equilibria and channel verdict"),
    "delay": (cmd_delay, "operating-point delay table and delay cdf"),
    "fet": (cmd_fet, "first exit time from the reduced Markov chain"),
    "sweep": (cmd_sweep, "closed-loop throughput and delay over control limits"),
    "simulate": (cmd_simulate, "one closed-loop run with trace"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crdsa", description="Random access stability, delay and FET toolkit.")
    ap.add_argument("--version", action="version", version=f"crdsa {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", help="output directory (default crdsa-<command>)")
        p.add_argument("--cache-dir", help="kernel cache directory (default $CRDSA_CACHE or ~/.cache/crdsa)")
        p.add_argument("--workers", type=int, default=0, help="Monte Carlo processes (default: all cores)")
        p.add_argument("--no-compute", action="store_true", help="fail instead of estimating missing kernels")
        if name == "delay":
            p.add_argument("--simulate", action="store_true", help="add closed-loop simulated columns")
        for f in dataclasses.fields(RunConfig):
            p.add_argument("--" + f.name.replace("_", "-"), dest="set_" + f.name, metavar="VALUE")
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    for f in dataclasses.fields(RunConfig):
        text = getattr(args, "set_" + f.name, None)
        if text is not None:
            changes[f.name] = convert(f.name, text)
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        r = Run(args.command, cfg, args)
        COMMANDS[args.command][0](r)
        r.write_manifest()
    except CrdsaError as exc:
        print(f"crdsa: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"crdsa: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
