"""Hypnogram CSV/SVG emission and plain-text result tables."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from somnwave.stages import SleepStage

# top-to-bottom order of the hypnogram stage axis
SVG_STAGE_ORDER = (SleepStage.W, SleepStage.REM, SleepStage.N1, SleepStage.N2, SleepStage.N3)

# published Fpz-Cz result the comparison table is set against (percent)
REFERENCE_RESULT = {"method": "reference (published)", "channel": "Fpz-Cz",
                    "accuracy": 88.37, "macro_f1": 73.15}


def write_hypnogram_csv(path, stages, proba, classes, epoch_len_s=30.0, artifact=None,
                        indices=None):
    """Rows of ``epoch_index, onset_s, stage, p_<class>..., artifact``."""
    stages = [SleepStage(int(s)) for s in stages]
    proba = np.asarray(proba)
    indices = range(len(stages)) if indices is None else indices
    artifact = [False] * len(stages) if artifact is None else artifact
    names = [SleepStage(int(c)).label for c in classes]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch_index", "onset_s", "stage", *(f"p_{n}" for n in names),
                         "artifact"])
        for i, idx in enumerate(indices):
            writer.writerow([int(idx), f"{idx * epoch_len_s:.1f}", stages[i].label,
                             *(f"{p:.6f}" for p in proba[i]), int(bool(artifact[i]))])
    return Path(path)


def read_hypnogram_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [SleepStage.from_name(r["stage"]) for r in rows]


def stage_transitions(stages):
    return sum(1 for a, b in zip(stages, stages[1:]) if a != b)


def hypnogram_points(stages, epoch_len_s=30.0):
    """Step-plot vertices ``(t_seconds, axis_row)``.

    Start and end points plus one vertex pair per stage change.
    """
    rows = {s: i for i, s in enumerate(SVG_STAGE_ORDER)}
    if not stages:
        return []
    pts = [(0.0, rows[stages[0]])]
    for i in range(1, len(stages)):
        if stages[i] != stages[i - 1]:
            t = i * epoch_len_s
            pts.append((t, rows[stages[i - 1]]))
            pts.append((t, rows[stages[i]]))
    pts.append((len(stages) * epoch_len_s, rows[stages[-1]]))
    return pts


def hypnogram_svg(stages, epoch_len_s=30.0, width=900, row_height=30, title=""):
    stages = [SleepStage(int(s)) for s in stages]
    margin_left, margin_top = 60, 30
    total = max(len(stages) * epoch_len_s, epoch_len_s)
    plot_w = width - margin_left - 20
    height = margin_top + row_height * (len(SVG_STAGE_ORDER) - 1) + 40

    def xy(t, row):
        return margin_left + plot_w * t / total, margin_top + row * row_height

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<title>{title or "hypnogram"}</title>',
    ]
    for i, stage in enumerate(SVG_STAGE_ORDER):
        _, y = xy(0, i)
        parts.append(f'<text x="{margin_left - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-size="12">{stage.label}</text>')
    hours = int(total // 3600)
    for h in range(hours + 1):
        x, _ = xy(h * 3600, len(SVG_STAGE_ORDER) - 1)
        parts.append(f'<text x="{x:.1f}" y="{height - 8}" text-anchor="middle" '
                     f'font-size="11">{h} h</text>')
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(t, r) for t, r in
                                                   hypnogram_points(stages, epoch_len_s)))
    parts.append(f'<polyline fill="none" stroke="black" stroke-width="1" points="{pts}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_hypnogram_svg(path, stages, epoch_len_s=30.0, title=""):
    Path(path).write_text(hypnogram_svg(stages, epoch_len_s, title=title))
    return Path(path)


def results_table(rows, include_reference=True):
    """Aligned text table with ``Method | Channel | ACC (%) | MF1 (%)`` columns.

    ``rows`` holds dicts with ``method``, ``channel``, ``accuracy`` and
    ``macro_f1`` as fractions.
    """
    body = [(r["method"], r["channel"], f"{100 * r['accuracy']:.2f}",
             f"{100 * r['macro_f1']:.2f}") for r in rows]
    if include_reference:
        ref = REFERENCE_RESULT
        body.append((ref["method"], ref["channel"], f"{ref['accuracy']:.2f}",
                     f"{ref['macro_f1']:.2f}"))
    header = ("Method", "Channel", "ACC (%)", "MF1 (%)")
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    line = "  ".join
    out = [line(h.ljust(w) for h, w in zip(header, widths)),
           line("-" * w for w in widths)]
    for row in body:
        out.append(line([row[0].ljust(widths[0]), row[1].ljust(widths[1]),
                         row[2].rjust(widths[2]), row[3].rjust(widths[3])]))
    return "\n".join(out) + "\n"
