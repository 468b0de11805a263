"""File formats: CSV load/save, JSON results, run manifests, SVG plots.

All CSV output is RFC-4180-style (comma-separated, LF line endings,
header row) with floats printed to 17 significant digits so values
round-trip exactly. SVG plots are static documents rendered directly by
this module; identical inputs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
from datetime import datetime, timezone

import numpy as np

from .model import IVDataset, ValidationError, validate_dataset

TOOL_VERSION = "0.1.0"


def fmt_float(x) -> str:
    """17-significant-digit decimal form; round-trips float64 exactly."""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    """Write rows of mixed str/float cells; floats via fmt_float."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [
                cell if isinstance(cell, str) else fmt_float(cell) for cell in row
            ]
            fh.write(",".join(cells) + "\n")


def _parse_matrix(path, header):
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    start = 1 if header else 0
    if len(lines) <= start - 1:
        raise ValidationError(f"{path}: file is empty")
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ValidationError(
                f"{path}: row {lineno} has {len(cells)} columns, expected {width}"
            )
        parsed = []
        for col, cell in enumerate(cells, start=1):
            try:
                parsed.append(float(cell.strip()))
            except ValueError:
                raise ValidationError(
                    f"{path}: parse error at row {lineno}, column {col}: {cell.strip()!r}"
                ) from None
        rows.append(parsed)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def load_dataset_csv(y_path, x_path, z_path, header=False) -> IVDataset:
    """Load (Y, X, Z) from three numeric CSV files and validate.

    Decimal parsing is locale-independent (dot only). Y may be a single
    column or a single row.
    """
    y = _parse_matrix(y_path, header)
    if y.shape[1] == 1:
        y = y[:, 0]
    elif y.shape[0] == 1:
        y = y[0]
    else:
        raise ValidationError(f"{y_path}: Y must be a single column, got {y.shape}")
    x = _parse_matrix(x_path, header)
    z = _parse_matrix(z_path, header)
    return validate_dataset(IVDataset(Y=y, X=x, Z=z))


def config_digest(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def build_manifest(command, resolved_config, seed, deviations, started_at):
    return {
        "command": command,
        "config_digest": config_digest(resolved_config),
        "resolved_config": resolved_config,
        "seed": seed,
        "tool_version": TOOL_VERSION,
        "timestamps": {
            "start": started_at,
            "end": datetime.now(timezone.utc).isoformat(),
        },
        "deviations": list(deviations),
    }


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ticks(lo, hi, count=5):
    return np.linspace(lo, hi, count)


def render_qq_svg(theoretical, empirical, title, path):
    """Static normal Q-Q plot: points, 45-degree reference, labeled axes."""
    theoretical = np.asarray(theoretical, dtype=float)
    empirical = np.asarray(empirical, dtype=float)
    if theoretical.shape != empirical.shape or theoretical.size == 0:
        raise ValidationError("Q-Q inputs must be equal-length nonempty vectors")
    w, h, margin = 480, 480, 60
    lo = float(min(theoretical.min(), empirical.min()))
    hi = float(max(theoretical.max(), empirical.max()))
    span = hi - lo if hi > lo else 1.0
    lo -= 0.05 * span
    hi += 0.05 * span

    def sx(v):
        return margin + (v - lo) / (hi - lo) * (w - 2 * margin)

    def sy(v):
        return h - margin - (v - lo) / (hi - lo) * (h - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.1f}" y="24" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{title}</text>',
        f'<line x1="{margin}" y1="{h - margin}" x2="{w - margin}" y2="{h - margin}" '
        f'stroke="black" stroke-width="1"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{h - margin}" '
        f'stroke="black" stroke-width="1"/>',
        f'<line x1="{sx(lo):.2f}" y1="{sy(lo):.2f}" x2="{sx(hi):.2f}" y2="{sy(hi):.2f}" '
        f'stroke="#888888" stroke-width="1" stroke-dasharray="4,3"/>',
    ]
    for t in _ticks(lo, hi):
        parts.append(
            f'<line x1="{sx(t):.2f}" y1="{h - margin}" x2="{sx(t):.2f}" '
            f'y2="{h - margin + 5}" stroke="black" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{sx(t):.2f}" y="{h - margin + 18}" text-anchor="middle" '
            f'font-size="10" font-family="sans-serif">{t:.2f}</text>'
        )
        parts.append(
            f'<line x1="{margin - 5}" y1="{sy(t):.2f}" x2="{margin}" '
            f'y2="{sy(t):.2f}" stroke="black" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{margin - 8}" y="{sy(t) + 3:.2f}" text-anchor="end" '
            f'font-size="10" font-family="sans-serif">{t:.2f}</text>'
        )
    parts.append(
        f'<text x="{w / 2:.1f}" y="{h - 14}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">theoretical quantile</text>'
    )
    parts.append(
        f'<text x="16" y="{h / 2:.1f}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 16 {h / 2:.1f})">'
        f"empirical quantile</text>"
    )
    for t, e in zip(theoretical, empirical):
        parts.append(
            f'<circle cx="{sx(t):.2f}" cy="{sy(e):.2f}" r="2" fill="#1f4e8c" '
            f'fill-opacity="0.7"/>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(parts) + "\n")
