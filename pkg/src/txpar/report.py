"""Aggregation helpers and deterministic CSV/JSON emission.

Everything here must be byte-stable: same inputs, same bytes out. No
timestamps, no absolute paths, sorted JSON keys, fixed column orders.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ValidationError

#: Default speedup bucket edges (powers of two); the last bucket is
#: open-ended. Shared by batch aggregates and the histogram subcommand.
DEFAULT_SPEEDUP_EDGES = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)


def speedup_histogram(
    values: Iterable[float],
    edges: Sequence[float] = DEFAULT_SPEEDUP_EDGES,
) -> tuple[tuple[float, float, int], ...]:
    """Bucket counts over speedups: [e0,e1), [e1,e2), ..., [e_last, inf)."""
    edges = tuple(edges)
    if len(edges) < 1 or list(edges) != sorted(edges):
        raise ValidationError("bucket edges must be sorted and non-empty")
    bounds = [(edges[k], edges[k + 1]) for k in range(len(edges) - 1)]
    bounds.append((edges[-1], float("inf")))
    counts = [0] * len(bounds)
    for value in values:
        for idx, (lo, hi) in enumerate(bounds):
            if lo <= value < hi:
                counts[idx] += 1
                break
    return tuple((lo, hi, count) for (lo, hi), count in zip(bounds, counts))


def mean(values: Sequence[float]) -> float:
    if not values:
        raise ValidationError("mean of empty sequence")
    return sum(values) / len(values)


def overall_speedup(total_serial: int, total_makespan: int) -> float:
    if total_makespan == 0:
        return 1.0
    return total_serial / total_makespan


def fmt(value) -> str:
    """Stable scalar formatting for CSV cells."""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def render_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(cell) for cell in row])
    return buf.getvalue()


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def render_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_json(path: Path, payload) -> None:
    write_text(path, render_json(payload))
