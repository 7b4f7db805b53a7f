"""Learning curves, success tables and an SVG plot from run directories."""

from __future__ import annotations

import csv
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from ..errors import CorruptionError
from .metrics import TABLE_ROWS, EpisodeRecord, ema, read_episodes, success_rates

CURVE_HEADER = ["epoch", "phase", "return", "return_ema", "goal", "goal_ema"]
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def method_of(run_dir) -> str:
    meta = Path(run_dir) / "run_meta.json"
    if not meta.is_file():
        raise CorruptionError(meta, "run metadata not found")
    try:
        return json.loads(meta.read_text(encoding="utf-8"))["method"]
    except (ValueError, KeyError) as e:
        raise CorruptionError(meta, f"unreadable run metadata ({e})") from e


def collect(run_dirs) -> dict[str, list[list[EpisodeRecord]]]:
    """Episode logs grouped by method, one list per run (seed)."""
    runs: dict[str, list] = {}
    for d in run_dirs:
        runs.setdefault(method_of(d), []).append(read_episodes(Path(d) / "episodes.csv"))
    return runs


def mean_curve(runs: list[list[EpisodeRecord]]) -> tuple[list, list, np.ndarray, np.ndarray]:
    """Per-epoch mean return and goal rate across runs, truncated to the shortest run."""
    n = min(len(r) for r in runs)
    ret = np.array([[rec.ret for rec in r[:n]] for r in runs]).mean(axis=0)
    goal = np.array([[float(rec.goal) for rec in r[:n]] for r in runs]).mean(axis=0)
    first = runs[0][:n]
    return [rec.epoch for rec in first], [rec.phase for rec in first], ret, goal


def write_curve(runs, path, w: float) -> list[float]:
    epochs, phases, ret, goal = mean_curve(runs)
    ret_ema, goal_ema = ema(ret, w), ema(goal, w)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CURVE_HEADER)
        for row in zip(epochs, phases, ret, ret_ema, goal, goal_ema):
            out.writerow([row[0], row[1]] + [repr(float(x)) for x in row[2:]])
    return ret_ema


def test_records(records: list[EpisodeRecord]) -> list[EpisodeRecord]:
    test = [r for r in records if r.phase == "mixed_test"]
    return test if test else records


def table_rows(runs: dict, window: int) -> list[list[str]]:
    """Success table: one row per subtask plus goal, one column per method.

    Rates pool the final ``window`` test episodes of every run of a method;
    the window shrinks to the available test episodes when shorter.
    """
    methods = sorted(runs)
    rows = [["row"] + methods]
    tables = {}
    for m in methods:
        pooled = []
        for recs in runs[m]:
            t = test_records(recs)
            pooled += t[-min(window, len(t)):]
        tables[m] = success_rates(pooled, len(pooled))
    for name in TABLE_ROWS:
        cells = []
        for m in methods:
            v = tables[m].rates[name]
            cells.append("NA" if v is None else f"{v:.6f}")
        rows.append([name] + cells)
    return rows


def write_table(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def svg_curves(curves: dict[str, list[float]], width: int = 640, height: int = 400) -> str:
    pad = 60
    allv = [v for c in curves.values() for v in c] or [0.0]
    lo, hi = min(allv), max(allv)
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    n = max((len(c) for c in curves.values()), default=1)
    sx = (width - 2 * pad) / max(n - 1, 1)
    sy = (height - 2 * pad) / (hi - lo)
    root = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height))
    ET.SubElement(root, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    ET.SubElement(root, "line", x1=str(pad), y1=str(height - pad), x2=str(width - pad), y2=str(height - pad),
                  stroke="black")
    ET.SubElement(root, "line", x1=str(pad), y1=str(pad), x2=str(pad), y2=str(height - pad), stroke="black")
    xl = ET.SubElement(root, "text", x=str(width // 2), y=str(height - 15), **{"text-anchor": "middle"})
    xl.text = "epoch"
    yl = ET.SubElement(root, "text", x="15", y=str(height // 2),
                       transform=f"rotate(-90 15 {height // 2})", **{"text-anchor": "middle"})
    yl.text = "return (EMA)"
    for label, y in ((hi, pad), (lo, height - pad)):
        t = ET.SubElement(root, "text", x=str(pad - 5), y=str(y), **{"text-anchor": "end", "font-size": "10"})
        t.text = f"{label:.1f}"
    for i, (method, c) in enumerate(sorted(curves.items())):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{pad + k * sx:.2f},{height - pad - (v - lo) * sy:.2f}" for k, v in enumerate(c))
        ET.SubElement(root, "polyline", points=pts, fill="none", stroke=color, **{"stroke-width": "1.5"})
        ly = pad + 16 * i
        ET.SubElement(root, "line", x1=str(width - pad - 90), y1=str(ly), x2=str(width - pad - 70), y2=str(ly),
                      stroke=color, **{"stroke-width": "3"})
        lt = ET.SubElement(root, "text", x=str(width - pad - 65), y=str(ly + 4), **{"font-size": "11"})
        lt.text = method
    return ET.tostring(root, encoding="unicode")


def report(run_dirs, out_dir, ema_weight: float = 0.95, window: int = 200, svg: bool = False) -> list[Path]:
    """Write ``<method>/learning_curve.csv``, ``success_table.csv`` and optionally ``curves.svg``."""
    runs = collect(run_dirs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    curves = {}
    for m, rs in sorted(runs.items()):
        (out / m).mkdir(exist_ok=True)
        p = out / m / "learning_curve.csv"
        curves[m] = write_curve(rs, p, ema_weight)
        written.append(p)
    p = out / "success_table.csv"
    write_table(table_rows(runs, window), p)
    written.append(p)
    if svg:
        p = out / "curves.svg"
        p.write_text(svg_curves(curves), encoding="utf-8")
        written.append(p)
    return written
