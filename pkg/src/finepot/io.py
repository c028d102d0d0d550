"""Serialization helpers: JSON reports, CSV field dumps, PGM images.

CSV fields use ``node_index,x1[,x2[,x3]],value`` columns in row-major node
order.  PGM images are 8-bit ASCII (P2) with the min/max normalization
recorded in a header comment; classification maps use the fixed levels
0 = outside, 128 = inconclusive, 255 = inside.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import PreconditionError
from .grid import GridDomain, NodeSet, ScalarField

__all__ = [
    "write_json",
    "field_to_csv",
    "field_from_csv",
    "write_field_pgm",
    "write_classification_pgm",
]


class _Encoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.bool_):
            return bool(o)
        return super().default(o)


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, cls=_Encoder, allow_nan=True) + "\n")
    return path


def field_to_csv(field: ScalarField, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dom = field.domain
    header = ["node_index"] + [f"x{a + 1}" for a in range(dom.dim)] + ["value"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(dom.n_nodes):
            w.writerow([i, *(f"{c:.17g}" for c in dom.coords[i]), f"{field.values[i]:.17g}"])
    return path


def field_from_csv(domain: GridDomain, path) -> ScalarField:
    values = np.full(domain.n_nodes, np.nan)
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "node_index" or header[-1] != "value":
            raise PreconditionError(f"unexpected CSV header {header}")
        for row in reader:
            values[int(row[0])] = float(row[-1])
    if np.isnan(values).any():
        raise PreconditionError("CSV does not cover every node")
    return ScalarField(domain, values)


def _as_image(domain: GridDomain, flat: np.ndarray) -> np.ndarray:
    if domain.dim == 1:
        return flat.reshape(1, -1)
    if domain.dim == 2:
        return flat.reshape(domain.shape)
    raise PreconditionError("PGM output supports 1D and 2D grids only")


def _write_pgm(img: np.ndarray, path: Path, comment: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols = img.shape
    lines = [f"P2", f"# {comment}", f"{cols} {rows}", "255"]
    for r in range(rows):
        lines.append(" ".join(str(int(v)) for v in img[r]))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_field_pgm(field: ScalarField, path) -> Path:
    """8-bit image of the field, min/max normalized (noted in the header)."""
    path = Path(path)
    vals = field.values
    finite = vals[np.isfinite(vals)]
    vmin = float(finite.min()) if finite.size else 0.0
    vmax = float(finite.max()) if finite.size else 1.0
    span = vmax - vmin if vmax > vmin else 1.0
    scaled = np.clip((vals - vmin) / span, 0.0, 1.0) * 255.0
    scaled[~np.isfinite(vals)] = 0.0
    img = _as_image(field.domain, np.round(scaled))
    return _write_pgm(img, path, f"min={vmin:.17g} max={vmax:.17g}")


def write_classification_pgm(inside: NodeSet, path, inconclusive: NodeSet | None = None) -> Path:
    """Mask image with levels 0=outside, 128=inconclusive, 255=inside."""
    path = Path(path)
    flat = np.zeros(inside.domain.n_nodes)
    flat[inside.mask] = 255
    if inconclusive is not None:
        flat[inconclusive.mask & ~inside.mask] = 128
    img = _as_image(inside.domain, flat)
    return _write_pgm(img, path, "levels: 0=outside 128=inconclusive 255=inside")
