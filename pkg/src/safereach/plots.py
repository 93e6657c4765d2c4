"""SVG report figures (contact-force histogram, KE/speed envelopes, bars).

SVG output is made reproducible by pinning the hash salt and dropping the
date metadata, so identical inputs give identical bytes.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "safereach"

import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def force_histogram(traces, path: Path, f_tau: float = 50.0) -> Optional[Path]:
    forces = [t.f_contact for t in traces if not math.isnan(t.f_contact)]
    if not forces:
        return None
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(forces, bins=30, color="tab:blue", edgecolor="black", linewidth=0.4)
    ax.axvline(f_tau, color="tab:red", linestyle="--", label=f"threshold {f_tau:g} N")
    ax.set_xlabel("contact force [N]")
    ax.set_ylabel("episodes")
    ax.legend(loc="upper right")
    fig.tight_layout()
    return _save(fig, path)


def envelope_plot(traces, path: Path, field: str, ylabel: str,
                  bound: Optional[float] = None, bound_label: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    horizon = max(t.steps for t in traces)
    mx = [0.0] * horizon
    for t in traces:
        series = getattr(t, field)
        for i, v in enumerate(series):
            if v > mx[i]:
                mx[i] = float(v)
        ax.plot(range(t.steps), series, color="tab:gray", alpha=0.15, linewidth=0.6)
    ax.plot(range(horizon), mx, color="tab:blue", linewidth=1.4, label="max over episodes")
    if bound is not None:
        ax.axhline(bound, color="tab:red", linestyle="--", label=bound_label)
    ax.set_xlabel("step")
    ax.set_ylabel(ylabel)
    ax.legend(loc="upper right")
    fig.tight_layout()
    return _save(fig, path)


def violation_bars(rows, path: Path) -> Optional[Path]:
    scored = [r for r in rows if r.metrics is not None]
    if not scored:
        return None
    fig, ax = plt.subplots(figsize=(5, 3.2))
    names = [r.preset for r in scored]
    rates = [r.metrics.sv_rate for r in scored]
    ax.bar(names, rates, color="tab:orange", edgecolor="black", linewidth=0.4)
    ax.set_ylabel("violation rate [% of contacts]")
    fig.tight_layout()
    return _save(fig, path)


def render_report_plots(out_dir: Path, traces, ablation=None,
                        shield_comparison=None) -> List[Path]:
    out_dir = Path(out_dir)
    written: List[Path] = []
    p = force_histogram(traces, out_dir / "force_histogram.svg")
    if p is not None:
        written.append(p)
    e_max = shield_comparison.e_max if shield_comparison is not None else None
    written.append(
        envelope_plot(traces, out_dir / "ke_envelope.svg", "ke",
                      "kinetic energy [J]", bound=e_max, bound_label="energy budget")
    )
    written.append(
        envelope_plot(traces, out_dir / "speed_envelope.svg", "spd",
                      "speed [m/s]")
    )
    if ablation is not None:
        p = violation_bars(ablation, out_dir / "violation_rates.svg")
        if p is not None:
            written.append(p)
    return written
