"""Command-line entry point ``visco-galerkin``.

Exit codes: 0 ok, 1 usage, 2 condition failure, 3 integrator failure,
4 no extinction, 5 non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence, TextIO

from . import files
from .config import ConfigError, ExperimentConfig, load_config
from .diagnostics import (
    WindowTooShortError,
    alpha_decay_fit,
    convergence_study,
    energy_inequality_check,
    extrapolate_T0,
    late_window,
    stopping_bound,
    sweep_threads,
)
from .integrator import IntegratorError, run
from .rhs import ViscosityOverflowError
from .viscosity import (
    CONDITIONS,
    DomainError,
    ParameterError,
    QuadratureError,
    ViscosityModel,
    catalog,
    check_conditions,
    check_lower_bound,
    model_from_params,
)

__all__ = ["main", "cmd_models", "cmd_run", "cmd_stoptime", "cmd_converge", "UsageError", "parse_model_spec"]

EXIT_OK, EXIT_USAGE, EXIT_CONDITION, EXIT_INTEGRATOR, EXIT_NO_EXTINCTION, EXIT_NONCONVERGENT = range(6)

# failures raised while integrating
_RUN_ERRORS = (IntegratorError, ViscosityOverflowError, DomainError, QuadratureError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- models ------------------------------------------------------------------------------


def parse_model_spec(spec: str) -> tuple[str, ViscosityModel]:
    """``name`` or ``name:key=value,key=value``; models are built without the
    admissibility checks so the condition report can show why one fails."""
    name, _, rest = spec.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"bad parameter {item!r} in {spec!r}; expected key=value")
        params[key.strip()] = val.strip() if key.strip() == "file" else float(val)
    if name not in catalog() and name != "table":
        raise UsageError(f"unknown model {name!r}; known: {', '.join(catalog())}, table")
    try:
        return spec, model_from_params(name, params, strict=False)
    except (ParameterError, OSError) as exc:
        raise UsageError(f"{spec}: {exc}") from None


def cmd_models(names: Sequence[str], out_dir: str | None = None, stream: TextIO | None = None) -> int:
    """Check (C1)-(C4) and the near-zero bound for each named model."""
    stream = stream or sys.stdout
    if not names or list(names) == ["all"]:
        names = list(catalog())
    models = [parse_model_spec(n) for n in names]
    width = max(len(n) for n, _ in models) + 2
    stream.write("model".ljust(width) + "".join(c.ljust(11) for c in CONDITIONS) + "result\n")
    rows = []
    failed = False
    for name, model in models:
        rep = check_conditions(model)
        marks = ["ok" if rep.passed[c] else "FAIL" for c in CONDITIONS]
        result = "PASS" if rep.all_passed else "FAIL"
        failed |= not rep.all_passed
        stream.write(name.ljust(width) + "".join(m.ljust(11) for m in marks) + result + "\n")
        for cond in rep.failures():
            t, v = rep.witnesses[cond][0]
            stream.write(f"  {cond} witness: t={t!r} violation={v!r}\n")
        rows.append([name] + [int(rep.passed[c]) for c in CONDITIONS])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files.write_rows(out / "models.csv", ["model", *CONDITIONS], rows)
    return EXIT_CONDITION if failed else EXIT_OK


# -- run ----------------------------------------------------------------------------------------


def _prepare(out: Path, cfg: ExperimentConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("FAILED", "events.log"):
        (out / stale).unlink(missing_ok=True)
    (out / "config.ini").write_text(cfg.echo(), encoding="utf-8", newline="\n")


def _simulate(cfg: ExperimentConfig, out: Path, eps: float | None = None):
    """One run with all outputs under ``out``; returns ``(traj, event)``.

    On failure the partial trajectory stays on disk next to a ``FAILED``
    marker and the error propagates.
    """
    eps = cfg.eps if eps is None else eps
    _prepare(out, replace(cfg, eps=eps))
    u0 = cfg.initial_state()
    files.save_snapshot(u0, out / "snapshot_initial.csv")
    snap_dir = out / "snapshots"
    counter = [0]

    with files.TrajectoryWriter(out / "trajectory.csv") as writer:

        def sink(t, d, row):
            writer(t, d, row)
            k = counter[0]
            counter[0] += 1
            if cfg.snapshot_every and k % cfg.snapshot_every == 0:
                snap_dir.mkdir(exist_ok=True)
                files.save_snapshot(u0.replace(d=d.copy(), t=t), snap_dir / f"snapshot_{k:06d}.csv")

        try:
            traj, event = run(u0, cfg.integrator, cfg.model, eps, cfg.forcing,
                              convection=cfg.convection, sink=sink)
        except _RUN_ERRORS as exc:
            partial = getattr(exc, "trajectory", None)
            if partial is not None and len(partial):
                files.save_snapshot(partial.state(len(partial) - 1), out / "snapshot_last.csv")
            (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8", newline="\n")
            raise

    files.save_snapshot(traj.state(len(traj) - 1), out / "snapshot_final.csv")
    rep = energy_inequality_check(traj)
    res = [0.0, *rep.balance_residuals]
    files.write_rows(
        out / "energy.csv",
        ["t", "inequality_margin", "balance_residual"],
        zip(traj.times, rep.margins, res),
    )
    with open(out / "events.log", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"RUN t_start={float(traj.times[0])!r} t_end={cfg.integrator.t_end!r} eps={eps!r}\n")
        if event is not None:
            fh.write(event.log_line() + "\n")
        else:
            fh.write(f"END t={float(traj.times[-1])!r} norm={float(traj['l2'][-1])!r}\n")
    return traj, event


def cmd_run(cfg: ExperimentConfig, out_dir: str | None = None, stream: TextIO | None = None) -> int:
    stream = stream or sys.stdout
    out = Path(out_dir or cfg.out_dir)
    try:
        traj, event = _simulate(cfg, out)
    except _RUN_ERRORS as exc:
        stream.write(f"integrator failure: {exc}\n")
        return EXIT_INTEGRATOR
    rep = energy_inequality_check(traj)
    stream.write(f"records {len(traj)}  steps {traj.meta.get('steps', 0)}  t_final {float(traj.times[-1])!r}\n")
    stream.write(f"||u|| final {float(traj['l2'][-1])!r}\n")
    stream.write(f"energy inequality worst margin {rep.worst_inequality_margin!r}\n")
    stream.write(f"balance residual max {rep.balance_residual_max!r}\n")
    stream.write((event.log_line() if event else "no extinction before t_end") + "\n")
    return EXIT_OK


# -- stoptime --------------------------------------------------------------------------------------


def cmd_stoptime(
    cfg: ExperimentConfig,
    out_dir: str | None = None,
    alpha: float | None = None,
    eps_list: Sequence[float] | None = None,
    stream: TextIO | None = None,
) -> int:
    """Extinction sweep over ``eps`` with the decay fit and the stopping-time bound."""
    stream = stream or sys.stdout
    alpha = alpha if alpha is not None else cfg.stop_alpha
    if alpha is None:
        alpha = cfg.model.alpha
    limit = 4.0 / (cfg.N + 2)
    if not 0 < alpha <= limit:
        raise UsageError(f"alpha={alpha} outside (0, 4/(N+2)] = (0, {limit:g}] for N={cfg.N}")
    T1 = cfg.forcing.T1
    if not T1 < cfg.integrator.t_end:
        raise UsageError(f"forcing cutoff T1={T1} must precede t_end={cfg.integrator.t_end}")
    eps_list = [float(e) for e in (eps_list or cfg.stop_eps)]
    if not eps_list:
        raise UsageError("empty eps list")
    bad = check_lower_bound(cfg.model, alpha)
    if bad:
        t, gap = bad[0]
        stream.write(f"lower bound F(t) >= kappa t^-alpha fails: t={t!r} shortfall={gap!r}\n")
        return EXIT_CONDITION

    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(
        replace(cfg, stop_alpha=alpha, stop_eps=tuple(eps_list)).echo(), encoding="utf-8", newline="\n"
    )

    def one(e):
        return _simulate(cfg, out / f"eps_{e!r}", e)

    workers = min(sweep_threads(), len(eps_list))
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(one, eps_list))
        else:
            results = [one(e) for e in eps_list]
    except _RUN_ERRORS as exc:
        stream.write(f"integrator failure: {exc}\n")
        return EXIT_INTEGRATOR

    reports = []
    rows = []
    lo, hi = cfg.stop_window
    for e, (traj, event) in zip(eps_list, results):
        try:
            fit = alpha_decay_fit(traj, alpha, late_window(traj, alpha, T1, lo, hi))
            rep = stopping_bound(traj, T1, alpha, fit, event)
        except (WindowTooShortError, ValueError) as exc:
            stream.write(f"eps={e!r}: no decay fit ({exc})\n")
            rep = None
        reports.append(rep)
        rows.append([
            e,
            event.T0 if event else math.nan,
            rep.T0_bound if rep else math.nan,
            rep.fit_slope if rep else math.nan,
            rep.fit_r2 if rep else math.nan,
            rep.l2_T1 if rep else math.nan,
            int(bool(rep and rep.bound_ok)),
        ])
    files.write_rows(
        out / "stoptime.csv", ["eps", "T0", "T0_bound", "fit_slope", "fit_r2", "l2_T1", "bound_ok"], rows
    )

    extinct = [(e, ev.T0) for e, (_, ev) in zip(eps_list, results) if ev is not None]
    finest = min(range(len(eps_list)), key=lambda k: eps_list[k])
    summary = reports[finest]
    if summary is not None and len(extinct) >= 3 and len(extinct) == len(eps_list):
        ext = extrapolate_T0(extinct)
        summary.eps_extrapolation = ext.table
        summary.T0_extrapolated = ext.T0_limit
        tail = f"\nT0 monotone in eps  {ext.monotone}"
    else:
        tail = ""
    text = (summary.summary() if summary else "no decay fit for the smallest eps") + tail + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8", newline="\n")
    stream.write(text)

    if len(extinct) < len(eps_list):
        missing = [e for e, (_, ev) in zip(eps_list, results) if ev is None]
        stream.write(f"no extinction above stop_tol by t_end for eps in {missing}\n")
        return EXIT_NO_EXTINCTION
    if not all(r is not None and r.bound_ok for r in reports):
        stream.write("stopping-time bound not met\n")
        return EXIT_CONDITION
    return EXIT_OK


# -- converge ---------------------------------------------------------------------------------


def cmd_converge(
    cfg: ExperimentConfig,
    out_dir: str | None = None,
    eps_list: Sequence[float] | None = None,
    m_list: Sequence[int] | None = None,
    stream: TextIO | None = None,
) -> int:
    stream = stream or sys.stdout
    eps_list = [float(e) for e in (eps_list or cfg.converge_eps)]
    m_list = [int(m) for m in (m_list or cfg.converge_m)]
    if len(eps_list) < 3 or len(m_list) < 3:
        raise UsageError("converge needs at least three eps values and three m values")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise UsageError("eps list must be strictly decreasing")
    if any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise UsageError("m list must be strictly increasing")
    icfg = cfg.integrator
    if icfg.record_dt is None:
        icfg = replace(icfg, record_dt=icfg.t_end / 20)
    cfg = replace(cfg, integrator=icfg, converge_eps=tuple(eps_list), converge_m=tuple(m_list))
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.echo(), encoding="utf-8", newline="\n")
    try:
        table = convergence_study(
            cfg.model, cfg.initial_state, icfg, eps_list, m_list, cfg.forcing, cfg.N,
            convection=cfg.convection,
        )
    except _RUN_ERRORS as exc:
        stream.write(f"integrator failure: {exc}\n")
        return EXIT_INTEGRATOR
    rows = table.rows()
    files.write_rows(out / "convergence.csv", ["axis", "fixed", "coarse", "fine", "difference"], rows)
    stream.write("axis  fixed        coarse       fine         L2(L2) difference\n")
    for axis, fixed, a, b, diff in rows:
        stream.write(f"{axis:<5} {fixed:<12.4g} {a:<12.4g} {b:<12.4g} {diff!r}\n")
    stream.write(f"eps axis decreasing {table.eps_monotone}; m axis decreasing {table.m_monotone}\n")
    return EXIT_OK if table.monotone else EXIT_NONCONVERGENT


# -- entry point ---------------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="visco-galerkin", description="Galerkin simulations of regularized generalized-Newtonian flow.")
    p.add_argument("command", choices=("models", "run", "stoptime", "converge"))
    p.add_argument("names", nargs="*", help="model specs for 'models', e.g. all or power_law:alpha=0.5")
    p.add_argument("--config", help="experiment configuration (INI)")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--eps", nargs="+", type=float, help="regularization value(s)")
    p.add_argument("--m", nargs="+", type=int, help="m_max value(s)")
    p.add_argument("--alpha", type=float, help="decay exponent for 'stoptime'")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> ExperimentConfig:
    if not args.config:
        raise UsageError(f"'{args.command}' needs --config")
    overrides = {}
    if args.command == "run":
        if args.eps:
            if len(args.eps) != 1:
                raise UsageError("run takes a single --eps value")
            overrides[("regularization", "eps")] = repr(args.eps[0])
        if args.m:
            if len(args.m) != 1:
                raise UsageError("run takes a single --m value")
            overrides[("basis", "m_max")] = str(args.m[0])
    return load_config(args.config, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"visco-galerkin: {exc}\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command != "models" and args.names:
            raise UsageError(f"unexpected arguments {args.names}")
        if args.command == "models":
            return cmd_models(args.names, args.out)
        cfg = _config(args)
        if args.command == "run":
            return cmd_run(cfg, args.out)
        if args.command == "stoptime":
            if args.m:
                raise UsageError("stoptime does not take --m")
            return cmd_stoptime(cfg, args.out, args.alpha, args.eps)
        return cmd_converge(cfg, args.out, args.eps, args.m)
    except (UsageError, ConfigError) as exc:
        sys.stderr.write(f"visco-galerkin: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
