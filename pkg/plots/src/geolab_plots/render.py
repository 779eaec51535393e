"""Render geolab CSV/JSON artifacts into figures.

Consumes only the public artifact schemas: annulus orbit and branch CSVs
(phi, y, arclength), trajectory CSVs (t, x1.., u1.., H), closed-geodesic
registry JSON, and crossing report JSON.  Rendering never mutates inputs;
for a fixed style version identical inputs produce identical image bytes.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

STYLE_VERSION = 1
KINDS = ("section", "branches", "drift", "spectrum")


class SchemaMismatch(Exception):
    """Input artifact is missing or does not match the declared schema."""


class EmptyInput(Exception):
    """Input artifact parsed but carries no plottable rows."""


@dataclass
class FigureRequest:
    kind: str
    inputs: list
    output: str
    style: dict = field(default_factory=dict)
    schema_version: int = STYLE_VERSION

    @classmethod
    def from_json(cls, path):
        try:
            payload = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise SchemaMismatch(f"request file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"request is not valid JSON: {exc}") from exc
        missing = {"kind", "inputs", "output"} - set(payload)
        if missing:
            raise SchemaMismatch(f"request lacks keys: {sorted(missing)}")
        return cls(
            kind=payload["kind"],
            inputs=list(payload["inputs"]),
            output=payload["output"],
            style=payload.get("style", {}),
            schema_version=int(payload.get("schema_version", STYLE_VERSION)),
        )

    def validate(self):
        if self.kind not in KINDS:
            raise SchemaMismatch(f"unknown figure kind {self.kind!r}; want one of {KINDS}")
        if self.schema_version != STYLE_VERSION:
            raise SchemaMismatch(
                f"schema version {self.schema_version} != supported {STYLE_VERSION}"
            )
        if not self.inputs:
            raise EmptyInput("no input artifacts listed")
        for p in self.inputs:
            if not Path(p).exists():
                raise SchemaMismatch(f"input artifact missing: {p}")


def _read_csv(path, required):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in required if c not in cols]
        if missing:
            raise SchemaMismatch(f"{path}: missing columns {missing}")
        rows = [{k: float(row[k]) for k in cols} for row in reader]
    if not rows:
        raise EmptyInput(f"{path}: no data rows")
    return {c: np.array([r[c] for r in rows]) for c in cols}


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: not valid JSON: {exc}") from exc


def _new_axes(style, xlabel, ylabel, title):
    fig, ax = plt.subplots(figsize=style.get("figsize", (6.0, 4.0)))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    return fig, ax


def _render_section(req, style):
    fig, ax = _new_axes(style, "phi", "y", style.get("title", "annulus section"))
    size = style.get("marker_size", 1.5)
    for i, path in enumerate(req.inputs):
        data = _read_csv(path, ("phi", "y"))
        ax.plot(np.mod(data["phi"], 2 * np.pi), data["y"], ".",
                markersize=size, label=Path(path).stem)
    ax.set_xlim(0, 2 * np.pi)
    ax.set_ylim(0, np.pi)
    if style.get("legend", False):
        ax.legend(loc="upper right", fontsize=7)
    return fig


def _render_branches(req, style):
    fig, ax = _new_axes(style, "phi", "y", style.get("title", "invariant branches"))
    csvs = [p for p in req.inputs if str(p).endswith(".csv")]
    jsons = [p for p in req.inputs if str(p).endswith(".json")]
    if not csvs:
        raise SchemaMismatch("branches figure needs at least one branch CSV")
    colors = ("#c23b22", "#1f5fa6", "#3b7a3b", "#8450a8")
    for i, path in enumerate(csvs):
        data = _read_csv(path, ("phi", "y"))
        phi = np.mod(data["phi"], 2 * np.pi)
        # break the polyline where it wraps across the seam
        jumps = np.where(np.abs(np.diff(phi)) > np.pi)[0]
        phi_plot = phi.copy()
        y_plot = data["y"].copy()
        for j in jumps[::-1]:
            phi_plot = np.insert(phi_plot, j + 1, np.nan)
            y_plot = np.insert(y_plot, j + 1, np.nan)
        ax.plot(phi_plot, y_plot, "-", linewidth=0.7,
                color=colors[i % len(colors)], label=Path(path).stem)
    for path in jsons:
        payload = _read_json(path)
        if "crossings" not in payload:
            raise SchemaMismatch(f"{path}: no 'crossings' key")
        pts = [c for c in payload["crossings"] if c.get("transverse")]
        shown = pts[: style.get("max_markers", 12)]
        for c in shown:
            ax.plot([c["point"][0]], [c["point"][1]], "k+", markersize=8)
            ax.annotate(f"{c['angle']:.3f}", (c["point"][0], c["point"][1]),
                        fontsize=6, xytext=(3, 3), textcoords="offset points")
    ax.set_xlim(0, 2 * np.pi)
    ax.legend(loc="upper right", fontsize=7)
    return fig


def _render_drift(req, style):
    fig, ax = _new_axes(style, "t", "|H - H0|", style.get("title", "energy drift"))
    for path in req.inputs:
        data = _read_csv(path, ("t", "H"))
        drift = np.abs(data["H"] - data["H"][0])
        floor = style.get("floor", 1e-18)
        ax.semilogy(data["t"], np.maximum(drift, floor), "-",
                    linewidth=0.8, label=Path(path).stem)
    ax.legend(loc="upper right", fontsize=7)
    return fig


def _render_spectrum(req, style):
    fig, ax = _new_axes(style, "Re", "Im", style.get("title", "monodromy spectrum"))
    th = np.linspace(0, 2 * np.pi, 256)
    ax.plot(np.cos(th), np.sin(th), "-", color="0.8", linewidth=0.8)
    markers = ("o", "s", "^", "D", "v")
    plotted = 0
    for path in req.inputs:
        payload = _read_json(path)
        orbits = payload.get("orbits")
        if orbits is None:
            raise SchemaMismatch(f"{path}: no 'orbits' key (registry JSON expected)")
        for i, orbit in enumerate(orbits):
            eigs = np.array(orbit["eigenvalues"], float)
            if eigs.ndim != 2 or eigs.shape[1] != 2:
                raise SchemaMismatch(f"{path}: eigenvalues must be [re, im] pairs")
            ax.plot(eigs[:, 0], eigs[:, 1], markers[i % len(markers)],
                    markersize=5, label=orbit.get("label", f"orbit {i}"))
            plotted += len(eigs)
    if plotted == 0:
        raise EmptyInput("registry contains no orbits")
    ax.axis("equal")
    ax.legend(loc="upper right", fontsize=7)
    return fig


_RENDERERS = {
    "section": _render_section,
    "branches": _render_branches,
    "drift": _render_drift,
    "spectrum": _render_spectrum,
}


def render(req):
    """Render the requested figure; returns the output path."""
    req.validate()
    style = dict(req.style)
    fig = _RENDERERS[req.kind](req, style)
    out = Path(req.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(
        out,
        dpi=style.get("dpi", 120),
        metadata={"Software": f"geolab-plots style {STYLE_VERSION}"},
    )
    plt.close(fig)
    return str(out)
