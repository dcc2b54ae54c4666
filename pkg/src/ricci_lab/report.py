"""Report artifacts for flow traces.

Three output formats, all plain: a CSV time series (one row per sample,
fixed column set), a JSON summary object, and an optional SVG figure with
one panel per diagnostic group.  The CSV is byte-identical across repeated
runs of the same configuration on the same build, so it can be diffed.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from . import flow as flow_mod
from .errors import FitError, TraceError

COLUMNS = (
    "t",
    "Y",
    "Z",
    "a",
    "aX",
    "osc_u",
    "osc_w",
    "sup_u",
    "sup_grad_u",
    "sup_lap_u",
    "lambda",
    "mu",
    "mu_tilde",
    "ratio",
    "margin_33",
    "margin_sandwich",
    "futaki",
    "mod_futaki",
)

TRACE_NAME = "trace.csv"
SUMMARY_NAME = "summary.json"
CURVES_NAME = "curves.svg"

_NAN = float("nan")


def _fmt(x: float) -> str:
    # 17 significant digits round-trip a double exactly
    return f"{float(x):.17g}"


def trace_rows(trace: flow_mod.FlowTrace, reports=None) -> list[dict]:
    """Assemble one dict per sample with the full column set.

    ``reports`` maps sample index -> ConditionReport; spectral and margin
    columns are NaN at samples that carry neither a spectrum nor a report.
    """
    if not trace.samples:
        raise TraceError("trace has no samples")
    reports = reports or {}
    rows = []
    for i, sample in enumerate(trace.samples):
        r = sample.diagnostics
        rep = reports.get(i)
        lam = mu = mu_tilde = m33 = msand = fut = mfut = _NAN
        if sample.spectrum is not None:
            lam = sample.spectrum.lambda_value
            mu = sample.spectrum.mu if sample.spectrum.mu is not None else _NAN
            mu_tilde = (
                sample.spectrum.mu_tilde if sample.spectrum.mu_tilde is not None else _NAN
            )
        if rep is not None:
            lam, mu, mu_tilde = rep.lam, rep.mu, rep.mu_tilde
            m33 = rep.check("strict-poincare-u").margin
            msand = min(
                rep.check("gap-sandwich-lower").margin,
                rep.check("gap-sandwich-upper").margin,
            )
            fut = rep.futaki_value
            mfut = rep.modified_futaki_value
        rows.append(
            {
                "t": r.t,
                "Y": r.y,
                "Z": r.z,
                "a": r.a,
                "aX": r.a_x,
                "osc_u": r.osc_u,
                "osc_w": r.osc_w,
                "sup_u": r.sup_norms["u"],
                "sup_grad_u": r.sup_norms["grad_u"],
                "sup_lap_u": r.sup_norms["lap_u"],
                "lambda": lam,
                "mu": mu,
                "mu_tilde": mu_tilde,
                "ratio": r.poincare_ratio,
                "margin_33": m33,
                "margin_sandwich": msand,
                "futaki": fut,
                "mod_futaki": mfut,
            }
        )
    return rows


def write_trace_csv(path: str, rows: list[dict]) -> None:
    lines = [",".join(COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in COLUMNS))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace_csv(path: str) -> list[dict]:
    """Parse a trace written by write_trace_csv; header must match exactly."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or tuple(lines[0].split(",")) != COLUMNS:
        raise TraceError(f"{path}: not a trace file (unexpected header)")
    rows = []
    for ln in lines[1:]:
        vals = ln.split(",")
        if len(vals) != len(COLUMNS):
            raise TraceError(f"{path}: row with {len(vals)} fields, expected {len(COLUMNS)}")
        rows.append({c: float(v) for c, v in zip(COLUMNS, vals)})
    return rows


def _config_echo(config: flow_mod.FlowConfig) -> dict:
    echo = asdict(config)
    echo["stepper"] = config.stepper.name.lower()
    return echo


def _fit_entry(trace) -> dict:
    try:
        fit = flow_mod.fit_decay_rate(trace)
    except FitError as exc:
        return {"error": str(exc)}
    return {
        "gamma": fit.gamma,
        "prefactor": fit.prefactor,
        "r_squared": fit.r_squared,
        "window": list(fit.window),
        "n_points": fit.n_points,
    }


def summarize(trace: flow_mod.FlowTrace, reports=None, check_lines=None) -> dict:
    """Single JSON-serializable object describing the run."""
    if not trace.samples:
        raise TraceError("trace has no samples")
    reports = reports or {}
    last = trace.samples[-1].diagnostics
    final = {
        "t": last.t,
        "Y": last.y,
        "Z": last.z,
        "a": last.a,
        "aX": last.a_x,
        "sup_u_minus_a": last.sup_norms["u_minus_a"],
        "sup_w_minus_ax": last.sup_norms["w_minus_ax"],
    }
    if reports:
        rep = reports[max(reports)]
        final["lambda"] = rep.lam
        final["margins"] = {c.name: c.margin for c in rep.checks}
    summary = {
        "status": trace.status,
        "dt": trace.dt,
        "n_steps": trace.n_steps,
        "n_samples": len(trace.samples),
        "config": _config_echo(trace.config),
        "fit": _fit_entry(trace),
        "final": final,
    }
    if check_lines is not None:
        summary["checks"] = check_lines
    return summary


def write_summary_json(path: str, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON-serializable: {type(obj).__name__}")


def _finite_pairs(rows, *names):
    t = np.array([row["t"] for row in rows])
    out = [t]
    for name in names:
        out.append(np.array([row[name] for row in rows]))
    return out


def _legend(ax) -> None:
    if ax.get_legend_handles_labels()[1]:
        ax.legend(loc="best", fontsize="small")


def render_curves(path: str, rows: list[dict]) -> None:
    """One panel per diagnostic group; positive series on log axes."""
    if not rows:
        raise TraceError("no rows to plot")
    import matplotlib

    matplotlib.use("Agg", force=True)
    matplotlib.rcParams["svg.hashsalt"] = "ricci-lab"
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 2, figsize=(9.6, 7.2), sharex=True)
    (ax_decay, ax_avg), (ax_sup, ax_spec) = axes

    t, y, z = _finite_pairs(rows, "Y", "Z")
    for name, series in (("Y", y), ("Z", z)):
        pos = series > 0.0
        if pos.any():
            ax_decay.semilogy(t[pos], series[pos], label=name)
    ax_decay.set_ylabel("variance / Dirichlet gap")
    _legend(ax_decay)

    _, a, ax_vals = _finite_pairs(rows, "a", "aX")
    ax_avg.plot(t, a, label="a")
    ax_avg.plot(t, ax_vals, label="a_X", ls="--")
    ax_avg.set_ylabel("weighted averages")
    _legend(ax_avg)

    _, su, sg, sl = _finite_pairs(rows, "sup_u", "sup_grad_u", "sup_lap_u")
    for name, series in (("sup|u|", su), ("sup|grad u|", sg), ("sup|lap u|", sl)):
        pos = series > 0.0
        if pos.any():
            ax_sup.semilogy(t[pos], series[pos], label=name)
    ax_sup.set_xlabel("t")
    ax_sup.set_ylabel("sup norms")
    _legend(ax_sup)

    _, lam, mu, mut, ratio = _finite_pairs(rows, "lambda", "mu", "mu_tilde", "ratio")
    for name, series, style in (
        ("lambda", lam, "-"),
        ("mu", mu, "--"),
        ("mu~", mut, ":"),
        ("ratio", ratio, "-."),
    ):
        ok = np.isfinite(series)
        if ok.any():
            ax_spec.plot(t[ok], series[ok], style, label=name)
    ax_spec.set_xlabel("t")
    ax_spec.set_ylabel("spectral quantities")
    _legend(ax_spec)

    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(
    trace: flow_mod.FlowTrace,
    reports=None,
    out_dir: str = ".",
    plots: bool = True,
    check_lines=None,
) -> dict[str, str]:
    """Write trace.csv, summary.json and (optionally) curves.svg to out_dir.

    Returns the mapping of artifact name to path.  An empty trace is an
    error; an unwritable directory surfaces as the underlying OSError.
    """
    rows = trace_rows(trace, reports)
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    trace_path = os.path.join(out_dir, TRACE_NAME)
    write_trace_csv(trace_path, rows)
    paths[TRACE_NAME] = trace_path
    summary_path = os.path.join(out_dir, SUMMARY_NAME)
    write_summary_json(summary_path, summarize(trace, reports, check_lines))
    paths[SUMMARY_NAME] = summary_path
    if plots:
        curves_path = os.path.join(out_dir, CURVES_NAME)
        render_curves(curves_path, rows)
        paths[CURVES_NAME] = curves_path
    return paths


class _CsvRecord:
    __slots__ = ("t", "y", "z")

    def __init__(self, t, y, z):
        self.t, self.y, self.z = t, y, z


def report_from_csv(trace_path: str, plots: bool = True) -> dict[str, str]:
    """Recompute the summary (and figure) from an existing trace.csv."""
    rows = read_trace_csv(trace_path)
    if not rows:
        raise TraceError(f"{trace_path}: no data rows")
    records = [_CsvRecord(row["t"], row["Y"], row["Z"]) for row in rows]
    last = rows[-1]
    summary = {
        "source": os.path.basename(trace_path),
        "n_samples": len(rows),
        "fit": _fit_entry(records),
        "final": {c: last[c] for c in COLUMNS},
    }
    out_dir = os.path.dirname(os.path.abspath(trace_path))
    paths = {}
    summary_path = os.path.join(out_dir, SUMMARY_NAME)
    write_summary_json(summary_path, summary)
    paths[SUMMARY_NAME] = summary_path
    if plots:
        curves_path = os.path.join(out_dir, CURVES_NAME)
        render_curves(curves_path, rows)
        paths[CURVES_NAME] = curves_path
    return paths
