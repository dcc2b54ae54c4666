"""Config-driven experiment runner.

Experiments are described by INI files with sections [geometry], [flow],
[spectral], [checks], [output]; unknown sections or keys are rejected so a
typo cannot silently change a run.  Subcommands:

    flow <config>...      integrate, write trace.csv / summary.json / curves.svg
    spectrum <config>...  spectrum of the configured initial metric
    check <config>...     integrate with checks forced on, print per-check lines
    report <trace>...     recompute summary and figure from an existing trace

Exit codes: 0 all enabled checks pass, 1 a check failed (or the run did not
complete), 2 configuration or I/O error.  The environment variable
RICCI_LAB_OUT overrides the output root; each config writes into
<root>/<config-stem>/ so sweeps never collide.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import flow as flow_mod
from . import geometry, invariants, potentials, report, spectral
from .errors import ConfigError, RicciLabError

_SCHEMA = {
    "geometry": {"backend", "grid_size"},
    "flow": {
        "t_end",
        "dt",
        "stepper",
        "cfl_safety",
        "c",
        "perturbation_amplitude",
        "perturbation_mode",
        "sample_stride",
    },
    "spectral": {"enabled", "m_max", "stride"},
    "checks": {
        "enabled",
        "slack",
        "futaki_tolerance",
        "monotonicity_tolerance",
        "require_modified_futaki_vanishing",
    },
    "output": {"directory", "plots"},
}

MONOTONICITY_TOL = 1e-10


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description (see module docstring for the keys)."""

    label: str
    flow: flow_mod.FlowConfig
    spectral_enabled: bool = True
    checks_enabled: bool = True
    slack: float = invariants.INEQ_SLACK
    futaki_tolerance: float = invariants.CLASS_TOL
    monotonicity_tolerance: float = MONOTONICITY_TOL
    require_modified_futaki: bool = False
    out_root: str | None = None
    plots: bool = True


def _parse_value(section: str, key: str, raw: str, kind, parser: configparser.ConfigParser):
    try:
        if kind is bool:
            return parser.getboolean(section, key)
        return kind(raw)
    except (ValueError, TypeError):
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}")


def parse_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    """Read and validate an INI experiment file, applying CLI overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}")

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")

    def get(section, key, kind, default):
        if parser.has_option(section, key):
            return _parse_value(section, key, parser.get(section, key), kind, parser)
        return default

    overrides = overrides or {}
    backend = overrides.get("backend") or get("geometry", "backend", str, "cp1_conformal")
    n_nodes = overrides.get("grid_size") or get("geometry", "grid_size", int, 65)

    amp = get("flow", "perturbation_amplitude", float, None)
    mode = get("flow", "perturbation_mode", int, 2)
    if "seed_perturbation" in overrides:
        amp, mode = overrides["seed_perturbation"]
    if amp is not None and amp != 0.0:
        perturbation = (float(amp), int(mode))
    else:
        perturbation = None

    stepper_name = get("flow", "stepper", str, flow_mod.Stepper.SEMI_IMPLICIT.name).strip()
    try:
        stepper = flow_mod.Stepper[stepper_name.upper()]
    except KeyError:
        known = ", ".join(s.name.lower() for s in flow_mod.Stepper)
        raise ConfigError(f"{path}: unknown stepper {stepper_name!r} (known: {known})")

    spectral_enabled = get("spectral", "enabled", bool, True)
    checks_enabled = get("checks", "enabled", bool, True)
    spectral_stride = get("spectral", "stride", int, 1)
    if spectral_stride < 1:
        raise ConfigError(f"{path}: [spectral] stride must be >= 1")
    want_spectra = spectral_enabled or checks_enabled

    slack = get("checks", "slack", float, invariants.INEQ_SLACK)
    futaki_tol = get("checks", "futaki_tolerance", float, invariants.CLASS_TOL)
    mono_tol = get("checks", "monotonicity_tolerance", float, MONOTONICITY_TOL)
    for name, val in (("slack", slack), ("futaki_tolerance", futaki_tol),
                      ("monotonicity_tolerance", mono_tol)):
        if not val > 0.0:
            raise ConfigError(f"{path}: [checks] {name} must be positive, got {val}")

    try:
        flow_config = flow_mod.FlowConfig(
            backend=str(backend),
            n_nodes=int(n_nodes),
            perturbation=perturbation,
            c=get("flow", "c", float, 0.0),
            t_end=overrides.get("t_end") or get("flow", "t_end", float, 5.0),
            stepper=stepper,
            cfl_safety=get("flow", "cfl_safety", float, 0.8),
            dt=get("flow", "dt", float, None),
            sample_stride=get("flow", "sample_stride", int, 10),
            spectrum_stride=spectral_stride if want_spectra else 0,
            m_max=get("spectral", "m_max", int, 3),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}")

    label = os.path.splitext(os.path.basename(path))[0]
    return ExperimentConfig(
        label=label,
        flow=flow_config,
        spectral_enabled=spectral_enabled,
        checks_enabled=checks_enabled,
        slack=slack,
        futaki_tolerance=futaki_tol,
        monotonicity_tolerance=mono_tol,
        require_modified_futaki=get(
            "checks", "require_modified_futaki_vanishing", bool, False
        ),
        out_root=get("output", "directory", str, None),
        plots=get("output", "plots", bool, True),
    )


def resolve_out_dir(cfg: ExperimentConfig) -> str:
    root = os.environ.get("RICCI_LAB_OUT") or cfg.out_root or "runs"
    return os.path.join(root, cfg.label)


def _condition_reports(trace: flow_mod.FlowTrace, cfg: ExperimentConfig) -> dict:
    """ConditionReport per sample that carries a spectrum."""
    reports = {}
    a0 = ax0 = None
    if trace.samples:
        first = trace.samples[0].diagnostics
        if cfg.flow.c == 0.0:
            a0 = first.a
        else:
            ax0 = first.a_x
    for i, (sample, state) in enumerate(zip(trace.samples, trace.snapshots)):
        if sample.spectrum is None:
            continue
        pots = potentials.compute_potentials(state, cfg.flow.c, method="closed")
        reports[i] = invariants.check_conditions(
            state,
            pots,
            sample.spectrum,
            a0=a0,
            ax0=ax0,
            slack=cfg.slack,
            futaki_tol=cfg.futaki_tolerance,
        )
    return reports


def _aggregate_checks(trace: flow_mod.FlowTrace, reports: dict, cfg: ExperimentConfig) -> list[dict]:
    """Collapse per-state checks into one line per check name, worst margin."""
    agg: dict[str, dict] = {}
    for rep in reports.values():
        for c in rep.checks:
            entry = agg.setdefault(
                c.name, {"name": c.name, "applicable": 0, "failed": 0, "margin": math.inf}
            )
            if c.applicable:
                entry["applicable"] += 1
                entry["margin"] = min(entry["margin"], c.margin)
                if not c.passed:
                    entry["failed"] += 1

    # trace-wide monotonicity of the flow's own average (per sampled step)
    recs = trace.diagnostics_records()
    if cfg.flow.c == 0.0:
        series, name = [r.a for r in recs], "average-monotone-u"
    else:
        series, name = [r.a_x for r in recs], "average-monotone-w"
    steps = np.diff(series) if len(series) > 1 else np.array([0.0])
    worst = float(steps.min()) if steps.size else 0.0
    agg[name] = {
        "name": name,
        "applicable": max(len(series) - 1, 0),
        "failed": int(np.sum(steps < -cfg.monotonicity_tolerance)),
        "margin": worst + cfg.monotonicity_tolerance,
    }

    lines = []
    for name in sorted(agg):
        entry = agg[name]
        enforced = name != "modified-futaki-vanishing" or cfg.require_modified_futaki
        if entry["applicable"] == 0:
            status = "skipped"
        elif entry["failed"] > 0:
            status = "FAIL"
        else:
            status = "pass"
        lines.append(
            {
                "name": name,
                "status": status,
                "enforced": enforced,
                "worst_margin": None if entry["applicable"] == 0 else float(entry["margin"]),
                "states": entry["applicable"],
            }
        )
    return lines


def _format_check_line(line: dict) -> str:
    margin = "" if line["worst_margin"] is None else f" (worst margin {line['worst_margin']:+.3e}, {line['states']} states)"
    suffix = "" if line["enforced"] else " [not enforced]"
    return f"check {line['name']}: {line['status']}{margin}{suffix}"


def _run_flow_command(config_path: str, overrides: dict, out: list[str], force_checks: bool) -> int:
    cfg = parse_config(config_path, overrides)
    if force_checks:
        cfg = dataclasses.replace(cfg, checks_enabled=True)
        if cfg.flow.spectrum_stride == 0:
            cfg = dataclasses.replace(
                cfg, flow=dataclasses.replace(cfg.flow, spectrum_stride=1)
            )
    trace = flow_mod.run_flow(cfg.flow)
    out.append(f"[{cfg.label}] status={trace.status} steps={trace.n_steps} dt={trace.dt:.6g}")

    reports = {}
    check_lines = None
    failures = []
    if cfg.checks_enabled:
        reports = _condition_reports(trace, cfg)
        check_lines = _aggregate_checks(trace, reports, cfg)
        for line in check_lines:
            out.append(f"[{cfg.label}] " + _format_check_line(line))
        failures = [l["name"] for l in check_lines if l["enforced"] and l["status"] == "FAIL"]

    paths = report.emit_report(
        trace, reports, resolve_out_dir(cfg), plots=cfg.plots, check_lines=check_lines
    )
    out.append(f"[{cfg.label}] wrote " + " ".join(sorted(paths.values())))

    if trace.status != "completed":
        out.append(f"[{cfg.label}] result: FAIL (run {trace.status})")
        return 1
    if failures:
        out.append(f"[{cfg.label}] result: FAIL ({', '.join(failures)})")
        return 1
    out.append(f"[{cfg.label}] result: PASS")
    return 0


def _run_spectrum_command(config_path: str, overrides: dict, out: list[str]) -> int:
    cfg = parse_config(config_path, overrides)
    state = geometry.initial_metric(geometry.make_grid(cfg.flow.backend, cfg.flow.n_nodes))
    if cfg.flow.perturbation is not None:
        amp, mode = cfg.flow.perturbation
        state = geometry.perturb_metric(state, amp, mode)
    pots = potentials.compute_potentials(state, cfg.flow.c, method="closed")
    rep = spectral.full_spectrum(state, pots.u, m_max=cfg.flow.m_max)
    out.append(
        f"[{cfg.label}] lambda={rep.lambda_value:.12f} (mode {rep.lambda_mode})  "
        f"band multiplicity={len(rep.band)}  mu={rep.mu:.12f}  mu~={rep.mu_tilde:.12f}"
    )
    for m in sorted(rep.modes):
        vals = "  ".join(f"{v:.10f}" for v in rep.modes[m])
        out.append(f"[{cfg.label}] mode {m:+d}: {vals}")
    out_dir = resolve_out_dir(cfg)
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "backend": rep.backend,
        "n_nodes": rep.n_nodes,
        "t": rep.t,
        "lambda": rep.lambda_value,
        "lambda_mode": rep.lambda_mode,
        "band": [[m, v] for m, v in rep.band],
        "kernel_dim": rep.kernel_dim,
        "mu": rep.mu,
        "mu_tilde": rep.mu_tilde,
        "modes": {str(m): [float(v) for v in vals] for m, vals in rep.modes.items()},
    }
    path = os.path.join(out_dir, "spectrum.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    out.append(f"[{cfg.label}] wrote {path}")
    return 0


def _run_report_command(trace_path: str, out: list[str]) -> int:
    paths = report.report_from_csv(trace_path)
    out.append(f"[report] wrote " + " ".join(sorted(paths.values())))
    return 0


def _job(args: tuple) -> tuple[int, str]:
    command, target, overrides = args
    out: list[str] = []
    try:
        if command == "report":
            code = _run_report_command(target, out)
        elif command == "spectrum":
            code = _run_spectrum_command(target, overrides, out)
        else:
            code = _run_flow_command(target, overrides, out, force_checks=command == "check")
    except (RicciLabError, OSError) as exc:
        msg = str(exc)
        out.append(f"error: {msg}" if target in msg else f"error: {target}: {msg}")
        code = 2
    return code, "\n".join(out)


def _parse_seed_perturbation(text: str) -> tuple[float, int]:
    parts = text.split(",")
    try:
        if len(parts) == 1:
            return float(parts[0]), 2
        if len(parts) == 2:
            return float(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise ConfigError(f"--seed-perturbation expects AMP or AMP,MODE, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ricci-lab",
        description="Flow integration, spectra and inequality checks on model geometries.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("flow", "integrate a configured flow and write report artifacts"),
        ("spectrum", "spectrum of the configured initial metric"),
        ("check", "integrate with all checks enabled; exit 1 on any failure"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("configs", nargs="+", metavar="CONFIG")
        p.add_argument("--grid-size", type=int, default=None)
        p.add_argument("--t-end", type=float, default=None)
        p.add_argument("--seed-perturbation", default=None, metavar="AMP[,MODE]")
        p.add_argument("--backend", default=None)
        p.add_argument("--jobs", type=int, default=1)
    p = sub.add_parser("report", help="recompute summary.json and curves.svg from a trace.csv")
    p.add_argument("configs", nargs="+", metavar="TRACE")
    p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides: dict = {}
    if getattr(args, "grid_size", None) is not None:
        overrides["grid_size"] = args.grid_size
    if getattr(args, "t_end", None) is not None:
        overrides["t_end"] = args.t_end
    if getattr(args, "backend", None) is not None:
        overrides["backend"] = args.backend
    if getattr(args, "seed_perturbation", None) is not None:
        try:
            overrides["seed_perturbation"] = _parse_seed_perturbation(args.seed_perturbation)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2

    jobs = [(args.command, target, overrides) for target in args.configs]
    if args.jobs > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(job) for job in jobs]

    code = 0
    for job_code, text in results:
        if text:
            print(text, file=sys.stderr if job_code == 2 else sys.stdout)
        code = max(code, job_code)
    return code


if __name__ == "__main__":
    sys.exit(main())
