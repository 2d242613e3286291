"""Self-contained SVG line charts over metrics CSVs.

Runs whose directory names differ only by a ``-seed<k>`` suffix are grouped
into one series and drawn as a mean line with a shaded min-max band. No
external renderer: charts are built directly as SVG markup.
"""

from __future__ import annotations

import os
import re
import xml.etree.ElementTree as ET

import numpy as np

from .exceptions import ContractError
from .metrics import read_metrics

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 64, "right": 16, "top": 28, "bottom": 44}
PALETTE = ("#1b6ca8", "#c2452d", "#3a8a3f", "#8a5ab0", "#b08900", "#5a5a5a")
SEED_SUFFIX = re.compile(r"[-_]seed\d+$")


def series_label(csv_path: str) -> str:
    base = os.path.basename(os.path.dirname(os.path.abspath(csv_path)))
    return SEED_SUFFIX.sub("", base) or "run"


def load_groups(csv_paths) -> dict[str, dict[str, np.ndarray]]:
    """Group CSVs by label; stack each column (n_runs, n_rows)."""
    grouped: dict[str, list] = {}
    for path in csv_paths:
        grouped.setdefault(series_label(path), []).append(read_metrics(path))
    out: dict[str, dict[str, np.ndarray]] = {}
    for label, runs in grouped.items():
        steps = [np.array([r.env_step for r in rows]) for rows in runs]
        for s in steps[1:]:
            if s.shape != steps[0].shape or not np.array_equal(s, steps[0]):
                raise ContractError(
                    f"series {label!r}: runs have different step grids and "
                    "cannot share a band")
        if steps[0].size == 0:
            raise ContractError(f"series {label!r}: no data rows")
        cols = {"env_step": steps[0].astype(float)}
        for field in ("eval_return", "v_hat", "v_true", "ratio",
                      "episode_return", "s_q", "beta_eff"):
            cols[field] = np.stack(
                [np.array([getattr(r, field) for r in rows]) for rows in runs])
        out[label] = cols
    return out


def _scale(lo: float, hi: float):
    if hi - lo < 1e-12:
        pad = max(abs(hi), 1.0) * 0.05
        lo, hi = lo - pad, hi + pad
    span = hi - lo
    return lo - 0.04 * span, hi + 0.04 * span


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    raw = np.linspace(lo, hi, n)
    return [float(f"{v:.4g}") for v in raw]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


class Chart:
    """One x/y chart; data coordinates are mapped on the fly."""

    def __init__(self, title: str, x_label: str, y_label: str):
        self.svg = ET.Element("svg", {
            "xmlns": "http://www.w3.org/2000/svg",
            "width": str(WIDTH), "height": str(HEIGHT),
            "viewBox": f"0 0 {WIDTH} {HEIGHT}",
            "font-family": "sans-serif", "font-size": "12",
        })
        ET.SubElement(self.svg, "rect", {
            "x": "0", "y": "0", "width": str(WIDTH), "height": str(HEIGHT),
            "fill": "white"})
        ET.SubElement(self.svg, "text", {
            "x": str(WIDTH / 2), "y": "18", "text-anchor": "middle",
            "font-size": "14"}).text = title
        self.x_label, self.y_label = x_label, y_label
        self.x_range = self.y_range = None
        self._legend: list[tuple[str, str]] = []

    def fit(self, xs: np.ndarray, ys: np.ndarray) -> None:
        finite = ys[np.isfinite(ys)]
        if finite.size == 0:
            raise ContractError("no finite values to plot")
        xlo, xhi = float(xs.min()), float(xs.max())
        ylo, yhi = float(finite.min()), float(finite.max())
        if self.x_range is None:
            self.x_range, self.y_range = [xlo, xhi], [ylo, yhi]
        else:
            self.x_range = [min(self.x_range[0], xlo), max(self.x_range[1], xhi)]
            self.y_range = [min(self.y_range[0], ylo), max(self.y_range[1], yhi)]

    def _map(self, x: float, y: float) -> tuple[float, float]:
        x0, x1 = _scale(*self.x_range)
        y0, y1 = _scale(*self.y_range)
        px = MARGIN["left"] + (x - x0) / (x1 - x0) * (
            WIDTH - MARGIN["left"] - MARGIN["right"])
        py = HEIGHT - MARGIN["bottom"] - (y - y0) / (y1 - y0) * (
            HEIGHT - MARGIN["top"] - MARGIN["bottom"])
        return px, py

    def band(self, xs, lo, hi, color: str) -> None:
        pts = [self._map(x, y) for x, y in zip(xs, hi)]
        pts += [self._map(x, y) for x, y in zip(xs[::-1], lo[::-1])]
        ET.SubElement(self.svg, "polygon", {
            "points": " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in pts),
            "fill": color, "fill-opacity": "0.18", "stroke": "none"})

    def line(self, xs, ys, color: str, label: str | None = None,
             dash: str | None = None) -> None:
        pts = [self._map(x, y) for x, y in zip(xs, ys)]
        attrs = {
            "points": " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in pts),
            "fill": "none", "stroke": color, "stroke-width": "1.6"}
        if dash:
            attrs["stroke-dasharray"] = dash
        ET.SubElement(self.svg, "polyline", attrs)
        if label:
            self._legend.append((label, color))

    def _axes(self) -> None:
        left, bottom = MARGIN["left"], HEIGHT - MARGIN["bottom"]
        right, top = WIDTH - MARGIN["right"], MARGIN["top"]
        for x1, y1, x2, y2 in ((left, bottom, right, bottom),
                               (left, bottom, left, top)):
            ET.SubElement(self.svg, "line", {
                "x1": str(x1), "y1": str(y1), "x2": str(x2), "y2": str(y2),
                "stroke": "#222", "stroke-width": "1"})
        for tx in _ticks(*self.x_range):
            px, _ = self._map(tx, self.y_range[0])
            ET.SubElement(self.svg, "line", {
                "x1": _fmt(px), "y1": str(bottom), "x2": _fmt(px),
                "y2": str(bottom + 4), "stroke": "#222"})
            ET.SubElement(self.svg, "text", {
                "x": _fmt(px), "y": str(bottom + 17),
                "text-anchor": "middle"}).text = f"{tx:g}"
        for ty in _ticks(*self.y_range):
            _, py = self._map(self.x_range[0], ty)
            ET.SubElement(self.svg, "line", {
                "x1": str(left - 4), "y1": _fmt(py), "x2": str(left),
                "y2": _fmt(py), "stroke": "#222"})
            ET.SubElement(self.svg, "text", {
                "x": str(left - 7), "y": _fmt(py + 4),
                "text-anchor": "end"}).text = f"{ty:g}"
        ET.SubElement(self.svg, "text", {
            "x": str((left + right) / 2), "y": str(HEIGHT - 8),
            "text-anchor": "middle"}).text = self.x_label
        label = ET.SubElement(self.svg, "text", {
            "x": "16", "y": str((top + bottom) / 2), "text-anchor": "middle",
            "transform": f"rotate(-90 16 {(top + bottom) / 2})"})
        label.text = self.y_label

    def _draw_legend(self) -> None:
        x = WIDTH - MARGIN["right"] - 150
        y = MARGIN["top"] + 8
        for label, color in self._legend:
            ET.SubElement(self.svg, "line", {
                "x1": str(x), "y1": str(y - 4), "x2": str(x + 22),
                "y2": str(y - 4), "stroke": color, "stroke-width": "2"})
            ET.SubElement(self.svg, "text", {
                "x": str(x + 28), "y": str(y)}).text = label
            y += 16

    def write(self, path: str) -> None:
        if self.x_range is None:
            raise ContractError("chart has no data")
        self._axes()
        self._draw_legend()
        ET.ElementTree(self.svg).write(path, encoding="unicode",
                                       xml_declaration=True)


def _add_series(chart: Chart, xs: np.ndarray, stacked: np.ndarray,
                color: str, label: str, dash: str | None = None) -> None:
    mean = stacked.mean(axis=0)
    chart.fit(xs, stacked.reshape(-1))
    if stacked.shape[0] > 1:
        chart.band(xs, stacked.min(axis=0), stacked.max(axis=0), color)
    chart.line(xs, mean, color, label=label, dash=dash)


def emit_plots(csv_paths, out_dir: str) -> list[str]:
    """Render the standard chart set; returns the written SVG paths."""
    if not csv_paths:
        raise ContractError("no CSV paths given")
    groups = load_groups(csv_paths)
    os.makedirs(out_dir, exist_ok=True)

    charts = {
        "return_vs_step.svg": Chart("Evaluation return", "environment step",
                                    "return"),
        "value_vs_step.svg": Chart("Value estimate vs true value",
                                   "environment step", "value"),
        "ratio_vs_step.svg": Chart("Overestimation ratio", "environment step",
                                   "(estimate - true) / true"),
    }
    paths = []
    for gi, (label, cols) in enumerate(sorted(groups.items())):
        color = PALETTE[gi % len(PALETTE)]
        xs = cols["env_step"]
        _add_series(charts["return_vs_step.svg"], xs, cols["eval_return"],
                    color, label)
        _add_series(charts["value_vs_step.svg"], xs, cols["v_hat"], color,
                    f"{label} estimate")
        _add_series(charts["value_vs_step.svg"], xs, cols["v_true"], color,
                    f"{label} true", dash="5,3")
        _add_series(charts["ratio_vs_step.svg"], xs, cols["ratio"], color,
                    label)
    for name, chart in charts.items():
        path = os.path.join(out_dir, name)
        chart.write(path)
        paths.append(path)
    return paths
