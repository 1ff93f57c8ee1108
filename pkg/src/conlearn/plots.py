"""Standalone SVG bar charts of H-beta scores.

One file per beta value: grouped bars, one group per integration mechanism,
one color per constraint-loss type. When a (mechanism, loss type) pair has
several cells (strategies, k values), the best-scoring cell is drawn, so
every bar height equals one aggregate CSV value exactly; the value is also
embedded in each bar's data-value attribute.
"""

from __future__ import annotations

import sys

LOSS_COLORS = {"soft": "#4c72b0", "binary": "#dd8452", "real": "#55a868", "none": "#8c8c8c"}
MECHANISM_ORDER = ("none", "static", "monotone", "proj_sup", "proj_con", "proj_both")
MECHANISM_LABELS = {"none": "baseline", "static": "static", "monotone": "monotone",
                    "proj_sup": "proj-sup", "proj_con": "proj-con", "proj_both": "proj-both"}

_WIDTH, _HEIGHT = 720, 400
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 56, 16, 40, 56


def _best_per_group(rows, beta_col):
    """(mechanism, loss_type) -> row with the highest aggregate H-beta."""
    best = {}
    for row in rows:
        if row.get("seed") != "AGG" or not row.get(beta_col):
            continue
        key = (row["mechanism"], row["loss_type"])
        value = float(row[beta_col])
        if key not in best or value > best[key][0]:
            best[key] = (value, row)
    return best


def render_svg(groups, title: str) -> str:
    """groups: list of (group label, list of (series label, value))."""
    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B
    bottom = _MARGIN_T + plot_h
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{title}</text>',
    ]
    for tick in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        y = bottom - tick * plot_h
        parts.append(f'<line x1="{_MARGIN_L}" y1="{y:.2f}" x2="{_WIDTH - _MARGIN_R}" '
                     f'y2="{y:.2f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{_MARGIN_L - 8}" y="{y + 4:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{tick:g}</text>')
    n_groups = max(len(groups), 1)
    group_w = plot_w / n_groups
    for gi, (label, bars) in enumerate(groups):
        gx = _MARGIN_L + gi * group_w
        n_bars = max(len(bars), 1)
        bar_w = min(group_w * 0.8 / n_bars, 48)
        total = bar_w * len(bars)
        start = gx + (group_w - total) / 2
        for bi, (series, value) in enumerate(bars):
            h = max(value, 0.0) * plot_h
            x = start + bi * bar_w
            color = LOSS_COLORS.get(series, "#333333")
            parts.append(
                f'<rect x="{x:.2f}" y="{bottom - h:.2f}" width="{bar_w * 0.9:.2f}" '
                f'height="{h:.2f}" fill="{color}" data-series="{series}" '
                f'data-group="{label}" data-value="{value!r}">'
                f'<title>{label} / {series}: {value!r}</title></rect>')
        parts.append(f'<text x="{gx + group_w / 2:.2f}" y="{bottom + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12">{label}</text>')
    seen = []
    for _, bars in groups:
        for series, _ in bars:
            if series not in seen:
                seen.append(series)
    lx = _MARGIN_L
    for series in seen:
        color = LOSS_COLORS.get(series, "#333333")
        parts.append(f'<rect x="{lx}" y="{_HEIGHT - 22}" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="{lx + 16}" y="{_HEIGHT - 12}" font-family="sans-serif" '
                     f'font-size="12">{series}</text>')
        lx += 16 + 8 * len(series) + 24
    parts.append(f'<line x1="{_MARGIN_L}" y1="{bottom}" x2="{_WIDTH - _MARGIN_R}" y2="{bottom}" '
                 f'stroke="#333333"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def emit_plots(rows: list[dict], betas, out_dir, stderr=sys.stderr) -> list[str]:
    """Write one grouped bar chart per task and beta; returns written paths."""
    import os

    rows = [r for r in rows if r.get("seed") == "AGG"]
    if not rows:
        print("emit_plots: no aggregate records; nothing drawn", file=stderr)
        return []
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    tasks_present = sorted({r["task"] for r in rows})
    for task in tasks_present:
        task_rows = [r for r in rows if r["task"] == task]
        for beta in betas:
            beta_col = f"hbeta_{beta:g}"
            best = _best_per_group(task_rows, beta_col)
            if not best:
                continue
            mechanisms = [m for m in MECHANISM_ORDER
                          if any(k[0] == m for k in best)]
            groups = []
            for mech in mechanisms:
                bars = [(loss, best[(mech, loss)][0])
                        for loss in ("soft", "binary", "real", "none")
                        if (mech, loss) in best]
                groups.append((MECHANISM_LABELS[mech], bars))
            svg = render_svg(groups, f"{task}: H-beta at beta={beta:g}")
            path = os.path.join(out_dir, f"hbeta_{task}_beta_{beta:g}.svg")
            with open(path, "w") as fh:
                fh.write(svg)
            paths.append(path)
    return paths
