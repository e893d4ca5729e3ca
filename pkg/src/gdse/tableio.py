"""Small deterministic CSV writing helpers shared by the export paths.

Floats are rendered with '%.17g' so that round-trips are exact and output
is byte-stable across runs and thread counts.
"""

from __future__ import annotations

import numpy as np


def fmt_value(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return "nan"
    return "%.17g" % float(v)


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt_value(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
