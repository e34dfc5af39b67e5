"""Figure rendering for CLI reports (PNG files next to the delimited output)."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_DPI = 150


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_node_intensity(node_intensity: Mapping[str, float], path,
                        title: str = "Nodal carbon intensity") -> None:
    buses = sorted(node_intensity)
    values = [node_intensity[b] for b in buses]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(buses) + 2.0), 3.5))
    ax.bar(buses, values, color="#4878a8")
    ax.set_ylabel("tCO2/MWh")
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    _finish(fig, path)


def plot_line_flows(line_flow: Mapping[str, float],
                    capacities: Mapping[str, Optional[float]], path,
                    title: str = "Line flows") -> None:
    lines = sorted(line_flow)
    flows = [abs(line_flow[l]) for l in lines]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(lines) + 2.0), 3.5))
    ax.bar(lines, flows, color="#6aa84f", label="|flow|")
    caps = [(i, capacities[l]) for i, l in enumerate(lines)
            if capacities.get(l) is not None]
    if caps:
        ax.scatter([i for i, _ in caps], [c for _, c in caps], marker="_",
                   s=400, color="#cc0000", label="capacity", zorder=3)
        ax.legend(loc="best", fontsize=8)
    ax.set_ylabel("MW")
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    _finish(fig, path)


def plot_emission_report(report, path, title: str = "Attributed emissions") -> None:
    records = [r for r in report.records if r.kind in ("generator", "load", "storage")]
    labels = [f"{r.entity_id}\n(s{r.scope})" for r in records]
    values = [r.emissions_ton for r in records]
    colors = {"generator": "#b45f06", "load": "#3d85c6", "storage": "#674ea7"}
    fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(records) + 2.0), 3.8))
    ax.bar(range(len(records)), values,
           color=[colors[r.kind] for r in records])
    ax.set_xticks(range(len(records)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("tCO2")
    ax.set_title(f"{title} [{report.method}]")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.grid(axis="y", alpha=0.3)
    _finish(fig, path)


def plot_prices(lmp: Mapping[str, float], clmp: Optional[Mapping[str, float]], path,
                title: str = "Nodal prices") -> None:
    buses = sorted(lmp)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(buses) + 2.0), 3.5))
    width = 0.38 if clmp else 0.7
    xs = range(len(buses))
    ax.bar([x - (width / 2 if clmp else 0) for x in xs],
           [lmp[b] for b in buses], width, color="#4878a8", label="LMP ($/MWh)")
    if clmp:
        ax.bar([x + width / 2 for x in xs], [clmp[b] for b in buses], width,
               color="#38761d", label="carbon-adjusted")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(buses)
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    _finish(fig, path)


def plot_storage_trajectory(states: Mapping[str, Sequence], path,
                            title: str = "Storage state") -> None:
    """Energy and stored carbon over the horizon, one panel per quantity."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.0, 4.5), sharex=True)
    for uid in sorted(states):
        seq = states[uid]
        ts = range(len(seq))
        ax1.step(ts, [s.energy_mwh for s in seq], where="post", label=uid)
        ax2.step(ts, [s.carbon_ton for s in seq], where="post", label=uid)
    ax1.set_ylabel("MWh")
    ax2.set_ylabel("tCO2 stored")
    ax2.set_xlabel("timestep")
    ax1.set_title(title)
    ax1.legend(loc="best", fontsize=8)
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    _finish(fig, path)
