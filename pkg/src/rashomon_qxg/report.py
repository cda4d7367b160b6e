"""Plots and summary tables from the agreement CSVs.

Plots are hand-written SVG so the bytes depend only on the numbers.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from .artifacts import read_csv, write_csv, write_text
from .errors import InputError

CLASS_LABELS = {"pair": "pair-based (GBDT)", "graph": "graph-based (GNN)"}
CONDITION_LABELS = {"all": "All", "correct_only": "Correct"}
TABLE_COLUMNS = ["approach", "condition", "mean", "std", "min", "max", "n_scenes", "n_skipped"]

W, H = 480, 320
LEFT, RIGHT, TOP, BOTTOM = 56, 16, 36, 44


def _num(text: str) -> float | None:
    return None if text in ("", None) else float(text)


def _y_domain(lows) -> tuple[float, float]:
    lo = min([0.0] + [v for v in lows if v is not None])
    return max(-1.0, math.floor(lo * 5) / 5), 1.0


def kappa_svg(title: str, ks, mean, std, k_max: int, header: str = "") -> str:
    """Line of mean kappa per k with a +/- one std band; x spans [1, k_max]."""
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    y0, y1 = _y_domain([m - s for m, s in zip(mean, std)])
    span = max(k_max - 1, 1)

    def sx(k):
        return LEFT + (k - 1) / span * pw

    def sy(v):
        return TOP + (y1 - v) / (y1 - y0) * ph

    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    if header:
        out.append(f"<!-- {escape(header)} -->")
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">')
    out.append(f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>')
    out.append(f'<text x="{W / 2:.2f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>')
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    ticks = sorted({1, k_max} | set(range(5, k_max + 1, 5)))
    for k in ticks:
        x = sx(k)
        out.append(f'<line x1="{x:.2f}" y1="{TOP + ph}" x2="{x:.2f}" y2="{TOP + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{TOP + ph + 16}" text-anchor="middle">{k}</text>')
    n_y = int(round((y1 - y0) / 0.2))
    for i in range(n_y + 1):
        v = y0 + i * 0.2
        y = sy(v)
        out.append(f'<line x1="{LEFT - 4}" y1="{y:.2f}" x2="{LEFT}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 7}" y="{y + 4:.2f}" text-anchor="end">{v:.1f}</text>')
    if y0 < 0:
        out.append(f'<line x1="{LEFT}" y1="{sy(0):.2f}" x2="{LEFT + pw}" y2="{sy(0):.2f}" stroke="#999" stroke-dasharray="3,3"/>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{H - 8}" text-anchor="middle">k (top-k features)</text>')
    out.append(f'<text x="14" y="{TOP + ph / 2:.2f}" text-anchor="middle" transform="rotate(-90 14 {TOP + ph / 2:.2f})">Fleiss kappa</text>')
    if ks:
        upper = [f"{sx(k):.2f},{sy(min(m + s, y1)):.2f}" for k, m, s in zip(ks, mean, std)]
        lower = [f"{sx(k):.2f},{sy(max(m - s, y0)):.2f}" for k, m, s in zip(ks, mean, std)]
        out.append(f'<polygon points="{" ".join(upper + lower[::-1])}" fill="#1f77b4" fill-opacity="0.25" stroke="none"/>')
        line = " ".join(f"{sx(k):.2f},{sy(m):.2f}" for k, m in zip(ks, mean))
        out.append(f'<polyline points="{line}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    else:
        out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{TOP + ph / 2:.2f}" text-anchor="middle">n/a (no scenes)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _cell(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def table_text(rows: list[dict], header: str = "") -> str:
    body = [TABLE_COLUMNS] + [[r["approach"], r["condition"]] + [_cell(_num(r[c])) for c in ("mean", "std", "min", "max")]
                              + [r["n_scenes"], r["n_skipped"]] for r in rows]
    widths = [max(len(str(row[i])) for row in body) for i in range(len(TABLE_COLUMNS))]
    lines = [header] if header else []
    lines.append("Kendall's W of feature rankings")
    for i, row in enumerate(body):
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def emit_report(out_dir, header: str = "", k_max: int | None = None) -> list[Path]:
    """Write one kappa plot per (class, condition) and the W summary table."""
    out_dir = Path(out_dir)
    topk_path, w_path = out_dir / "agreement_topk.csv", out_dir / "agreement_w.csv"
    for p in (topk_path, w_path):
        if not p.exists():
            raise InputError(f"missing report input {p}")
    _, topk = read_csv(topk_path)
    _, wrows = read_csv(w_path)
    if k_max is None:
        k_max = max([int(r["k"]) for r in topk], default=1)
    written = []
    table = []
    for r in wrows:
        cls, cond = r["model_class"], r["condition"]
        series = [t for t in topk if t["model_class"] == cls and t["condition"] == cond]
        ks = [int(t["k"]) for t in series]
        title = f"{CLASS_LABELS.get(cls, cls)}, {CONDITION_LABELS.get(cond, cond)}"
        svg = kappa_svg(title, ks, [float(t["kappa_mean"]) for t in series], [float(t["kappa_std"]) for t in series], k_max, header)
        written.append(write_text(out_dir / f"kappa_{cls}_{cond}.svg", svg))
        table.append({"approach": CLASS_LABELS.get(cls, cls), "condition": CONDITION_LABELS.get(cond, cond),
                      **{c: r[c] for c in ("mean", "std", "min", "max", "n_scenes", "n_skipped")}})
    comments = [header] if header else []
    rows = ([t["approach"], t["condition"]] + [t[c] or "n/a" for c in ("mean", "std", "min", "max")] + [t["n_scenes"], t["n_skipped"]]
            for t in table)
    written.append(write_csv(out_dir / "table_w.csv", TABLE_COLUMNS, rows, comments))
    written.append(write_text(out_dir / "table_w.txt", table_text(table, header)))
    return written
