"""Figures for simulation reports, written next to the CSV output.

Uses the object-oriented matplotlib API with the Agg canvas only, so nothing
here touches pyplot's global state or needs a display.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from tda.scheduler import Policy
from tda.sim import SimOutcome

POLICY_STYLE = {Policy.HOMOGENIZED: dict(color="black", marker="o", label="homogenized"),
                Policy.EQUAL_SPLIT: dict(color="0.55", marker="s", label="equal split")}
COMPUTE_COLOR = "0.15"
OVERHEAD_COLOR = "0.7"


def _figure(width=7.0, height=None, ncols=1):
    height = height or width * 0.618
    fig = Figure(figsize=(width, height), facecolor="w")
    FigureCanvasAgg(fig)
    axes = fig.subplots(1, ncols, squeeze=False)[0]
    for ax in axes:
        ax.grid(True, alpha=0.3)
    return fig, axes


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def _pick_load(outcome: SimOutcome, load):
    loads = outcome.scenario.loads
    if load is None:
        return 800 if 800 in loads else loads[-1]
    return load


def time_breakdown(outcome: SimOutcome, path, load=None) -> Path:
    """Stacked compute/overhead bars per provider count for each policy, plus speedup."""
    load = _pick_load(outcome, load)
    policies = [p for p in (Policy.EQUAL_SPLIT, Policy.HOMOGENIZED) if p in outcome.scenario.policies]
    fig, axes = _figure(width=4.0 * (len(policies) + 1), ncols=len(policies) + 1)
    for ax, policy in zip(axes, policies):
        runs = outcome.series(policy, load)
        n = [r.n_providers for r in runs]
        compute = [r.t_compute_max_s for r in runs]
        ax.bar(n, compute, color=COMPUTE_COLOR, label="computation")
        ax.bar(n, [r.t_overhead_s for r in runs], bottom=compute, color=OVERHEAD_COLOR, label="overhead")
        ax.set_title(f"{POLICY_STYLE[policy]['label']}, {load} rows")
        ax.set_xlabel("service providers")
        ax.set_ylabel("time")
        ax.set_xticks(n)
        ax.legend(fontsize="small")
    ax = axes[-1]
    for policy in policies:
        runs = outcome.series(policy, load)
        ax.plot([r.n_providers for r in runs], [r.speedup_measured for r in runs], **POLICY_STYLE[policy])
    ax.set_xlabel("service providers")
    ax.set_ylabel("speedup")
    ax.legend(fontsize="small")
    return _save(fig, path)


def formula_vs_simulated(outcome: SimOutcome, path, load=None) -> Path:
    load = _pick_load(outcome, load)
    fig, (ax,) = _figure()
    runs = outcome.series(Policy.HOMOGENIZED, load)
    n = [r.n_providers for r in runs]
    ax.plot(n, [r.speedup_measured for r in runs], "ko-", label="simulated")
    ax.plot(n, [r.speedup_formula for r in runs], "k--", label="formula")
    ax.set_title(f"homogenized speedup, {load} rows")
    ax.set_xlabel("service providers")
    ax.set_ylabel("speedup")
    ax.legend()
    return _save(fig, path)


def overhead_vs_load(outcome: SimOutcome, path) -> Path:
    sc = outcome.scenario
    fig, (ax,) = _figure()
    n = max(sc.counts)
    runs = sorted((r for r in outcome.runs if r.n_providers == n and r.policy == sc.policies[0]),
                  key=lambda r: r.load_rows)
    loads = np.array([r.load_rows for r in runs], dtype=float)
    ax.plot(loads, [r.t_overhead_s for r in runs], "ko", label="simulated")
    ax.plot(loads, sc.overhead_slope * loads, "k-", lw=0.8, label=f"M x L, M = {sc.overhead_slope:g}")
    ax.set_xlabel("load (rows)")
    ax.set_ylabel("overhead")
    ax.legend()
    return _save(fig, path)


def speedup_by_load(outcome: SimOutcome, path) -> Path:
    sc = outcome.scenario
    policies = [p for p in (Policy.EQUAL_SPLIT, Policy.HOMOGENIZED) if p in sc.policies]
    fig, axes = _figure(width=5.0 * len(policies), ncols=len(policies))
    shades = np.linspace(0.75, 0.0, len(sc.loads))
    ymax = max(r.speedup_measured for r in outcome.runs) * 1.05
    for ax, policy in zip(axes, policies):
        for load, shade in zip(sc.loads, shades):
            runs = outcome.series(policy, load)
            ax.plot([r.n_providers for r in runs], [r.speedup_measured for r in runs],
                    color=str(shade), marker=".", label=f"{load}")
        ax.axhline(1.0, color="k", lw=0.5)
        ax.set_ylim(0, ymax)
        ax.set_title(POLICY_STYLE[policy]["label"])
        ax.set_xlabel("service providers")
        ax.set_ylabel("speedup")
        ax.legend(title="rows", fontsize="small")
    return _save(fig, path)


def render_report(outcome: SimOutcome, out_dir, stem: str = "sim") -> list[Path]:
    """Write every figure as ``<stem>_<name>.png`` in ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [speedup_by_load(outcome, out_dir / f"{stem}_speedup_by_load.png"),
             overhead_vs_load(outcome, out_dir / f"{stem}_overhead.png")]
    if Policy.HOMOGENIZED in outcome.scenario.policies:
        paths.append(formula_vs_simulated(outcome, out_dir / f"{stem}_formula.png"))
    paths.append(time_breakdown(outcome, out_dir / f"{stem}_time_breakdown.png"))
    return paths
