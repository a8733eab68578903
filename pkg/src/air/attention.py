"""Attention maps: construction from fixations, resampling, priors, and I/O.

An :class:`AttentionMap` is a dense H x W grid registered to a source frame
``(width, height)``; the grid resolution and the frame are independent, so a
256 x 256 map can score boxes given in original image pixels.

Binary interchange format ``AIRM``: 8-byte magic ``AIRMAP01``, then u32 H,
u32 W (little endian), then H*W float32 values in row-major order.  PNG
export is 8-bit grayscale scaled by the maximum and meant for eyeballing
only; it does not round-trip exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import BadEdges, LengthMismatch, NoFixations, SchemaError
from .scene_graph import BoundingBox

AIRM_MAGIC = b"AIRMAP01"


@dataclass
class AttentionMap:
    grid: np.ndarray                # H x W float64
    frame: tuple[float, float]      # (width, height) of the registered image

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2 or self.grid.shape[0] < 1 or self.grid.shape[1] < 1:
            raise SchemaError(f"attention grid must be 2-D, got {self.grid.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def registered_to(self, width: float, height: float) -> "AttentionMap":
        """Same grid re-declared to span a different source frame."""
        return replace(self, frame=(float(width), float(height)))


@dataclass(frozen=True)
class FixationRecord:
    x: float
    y: float
    t_onset: float
    subject_id: str = ""
    correct: bool | None = None


@dataclass(frozen=True)
class FixationSequence:
    question_id: str
    fixations: tuple[FixationRecord, ...]

    def __post_init__(self):
        times = [f.t_onset for f in self.fixations]
        if any(b < a for a, b in zip(times, times[1:])):
            raise SchemaError(f"{self.question_id}: fixations not ordered by onset")

    @classmethod
    def make(cls, question_id: str, fixations) -> "FixationSequence":
        return cls(question_id, tuple(sorted(fixations, key=lambda f: f.t_onset)))

    def points(self) -> np.ndarray:
        return np.array([(f.x, f.y) for f in self.fixations], dtype=np.float64).reshape(-1, 2)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Discrete Gaussian truncated at 4 sigma, renormalized to unit mass."""
    radius = int(4.0 * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2) if sigma > 0 else np.ones(1)
    return k / k.sum()


def _pixel_indices(xs, ys, frame, shape) -> tuple[np.ndarray, np.ndarray]:
    """Map frame coordinates to integer grid cells (floor rule, clipped)."""
    h, w = shape
    fw, fh = frame
    cols = np.clip(np.floor(np.asarray(xs) * (w / fw)).astype(int), 0, w - 1)
    rows = np.clip(np.floor(np.asarray(ys) * (h / fh)).astype(int), 0, h - 1)
    return rows, cols


def build_fixation_map(
    fx: list[FixationRecord],
    frame: tuple[float, float],
    out_size: int = 256,
    sigma: float = 9.0,
) -> AttentionMap:
    """Accumulate fixation impulses, smooth with a Gaussian, normalize peak to 1.

    Coordinates are stretched from ``frame`` into an ``out_size`` square grid.
    Smoothing is the separable truncated kernel with zero padding outside the
    grid, rendered directly per impulse (equal to a constant-boundary
    convolution of the impulse image).
    """
    if not fx:
        raise NoFixations("cannot build a fixation map from zero fixations")
    rows, cols = _pixel_indices(
        [f.x for f in fx], [f.y for f in fx], frame, (out_size, out_size)
    )
    kern = gaussian_kernel_1d(sigma)
    radius = (len(kern) - 1) // 2
    n = len(fx)
    gy = np.zeros((n, out_size))
    gx = np.zeros((n, out_size))
    for i, (r, c) in enumerate(zip(rows, cols)):
        lo, hi = max(0, r - radius), min(out_size, r + radius + 1)
        gy[i, lo:hi] = kern[lo - (r - radius) : hi - (r - radius)]
        lo, hi = max(0, c - radius), min(out_size, c + radius + 1)
        gx[i, lo:hi] = kern[lo - (c - radius) : hi - (c - radius)]
    grid = gy.T @ gx
    peak = grid.max()
    if peak > 0:
        grid /= peak
    return AttentionMap(grid, (float(frame[0]), float(frame[1])))


def temporal_bins(
    seq: FixationSequence, edges: list[float] | None = None
) -> tuple[list[list[FixationRecord]], int]:
    """Partition fixations into half-open onset bins ``[e_j, e_{j+1})``.

    Returns (bins, dropped) where dropped counts fixations outside
    ``[edges[0], edges[-1])``.
    """
    if edges is None:
        edges = [0.0, 1.0, 2.0, 3.0]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise BadEdges(f"edges must be strictly increasing, got {edges}")
    bins: list[list[FixationRecord]] = [[] for _ in range(len(edges) - 1)]
    dropped = 0
    for f in seq.fixations:
        if f.t_onset < edges[0] or f.t_onset >= edges[-1]:
            dropped += 1
            continue
        j = int(np.searchsorted(edges, f.t_onset, side="right")) - 1
        bins[j].append(f)
    return bins, dropped


def resample_map(m: AttentionMap, out_h: int, out_w: int) -> AttentionMap:
    """Bilinear resample preserving total mass (sum unchanged to 1e-6 rel)."""
    if out_h < 1 or out_w < 1:
        raise SchemaError("output size must be >= 1")
    h, w = m.grid.shape
    if (out_h, out_w) == (h, w):
        return AttentionMap(m.grid.copy(), m.frame)
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    g = m.grid
    out = (
        g[np.ix_(y0, x0)] * (1 - wy) * (1 - wx)
        + g[np.ix_(y0, x1)] * (1 - wy) * wx
        + g[np.ix_(y1, x0)] * wy * (1 - wx)
        + g[np.ix_(y1, x1)] * wy * wx
    )
    total_in, total_out = g.sum(), out.sum()
    if total_out > 0:
        out *= total_in / total_out
    return AttentionMap(out, m.frame)


def box_pixel_slice(
    box: BoundingBox, frame: tuple[float, float], shape: tuple[int, int]
) -> tuple[int, int, int, int]:
    """Half-open (row_lo, row_hi, col_lo, col_hi) of pixels whose centers fall
    inside the box after mapping frame coordinates onto the grid."""
    h, w = shape
    fw, fh = frame
    sx, sy = w / fw, h / fh
    cx = np.arange(w) + 0.5
    cy = np.arange(h) + 0.5
    col_lo = int(np.searchsorted(cx, box.x * sx, side="left"))
    col_hi = int(np.searchsorted(cx, (box.x + box.w) * sx, side="left"))
    row_lo = int(np.searchsorted(cy, box.y * sy, side="left"))
    row_hi = int(np.searchsorted(cy, (box.y + box.h) * sy, side="left"))
    return row_lo, row_hi, col_lo, col_hi


def proposals_to_map(
    weights: list[float],
    proposals: list[BoundingBox],
    out_size: int = 256,
    frame: tuple[float, float] | None = None,
) -> AttentionMap:
    """Render per-proposal weights spatially: each box spreads its weight
    uniformly over its pixels, summing where boxes overlap.

    ``frame`` defaults to the grid itself (boxes already in grid pixels).
    A sub-pixel box falls back to the single cell holding its center.
    """
    if len(weights) != len(proposals):
        raise LengthMismatch(f"{len(weights)} weights vs {len(proposals)} proposals")
    if frame is None:
        frame = (float(out_size), float(out_size))
    grid = np.zeros((out_size, out_size))
    for wgt, box in zip(weights, proposals):
        if wgt < 0:
            raise SchemaError(f"negative proposal weight {wgt}")
        r0, r1, c0, c1 = box_pixel_slice(box, frame, grid.shape)
        n_px = max(0, r1 - r0) * max(0, c1 - c0)
        if n_px == 0:
            rr, cc = _pixel_indices([box.x + box.w / 2], [box.y + box.h / 2], frame, grid.shape)
            grid[rr[0], cc[0]] += wgt
        else:
            grid[r0:r1, c0:c1] += wgt / n_px
    return AttentionMap(grid, (float(frame[0]), float(frame[1])))


def center_prior(out_size: int = 256, sigma: float = 15.0) -> AttentionMap:
    """Gaussian centered mid-grid, peak normalized to 1."""
    c = (out_size - 1) / 2.0
    ax = np.arange(out_size) - c
    g1 = np.exp(-0.5 * (ax / sigma) ** 2)
    grid = np.outer(g1, g1)
    grid /= grid.max()
    return AttentionMap(grid, (float(out_size), float(out_size)))


def write_airm(m: AttentionMap, path: str | Path) -> None:
    h, w = m.grid.shape
    with open(path, "wb") as f:
        f.write(AIRM_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(m.grid.astype("<f4").tobytes(order="C"))


def read_airm(path: str | Path) -> AttentionMap:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != AIRM_MAGIC:
        raise SchemaError(f"{path}: not an AIRM file")
    h, w = struct.unpack("<II", data[8:16])
    expect = 16 + 4 * h * w
    if len(data) != expect:
        raise SchemaError(f"{path}: expected {expect} bytes, got {len(data)}")
    grid = np.frombuffer(data[16:], dtype="<f4").reshape(h, w).astype(np.float64)
    return AttentionMap(grid, (float(w), float(h)))


def write_png(m: AttentionMap, path: str | Path) -> None:
    """Visualization-only grayscale dump (max-scaled, 8-bit)."""
    from PIL import Image

    peak = m.grid.max()
    scaled = m.grid / peak if peak > 0 else m.grid
    Image.fromarray((scaled * 255).round().astype(np.uint8), mode="L").save(path)


def read_png(path: str | Path) -> AttentionMap:
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
    return AttentionMap(arr, (float(arr.shape[1]), float(arr.shape[0])))


def load_fixations(path: str | Path) -> dict[str, FixationSequence]:
    """Read ``fixations.json``:
    ``{question_id: [{"x","y","t","subject","correct"}]}``."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SchemaError(f"cannot read fixations {path}: {e}") from e
    if not isinstance(raw, dict):
        raise SchemaError("fixations.json must map question_id -> list")
    out: dict[str, FixationSequence] = {}
    for qid, entries in raw.items():
        try:
            recs = [
                FixationRecord(
                    float(e["x"]), float(e["y"]), float(e["t"]),
                    str(e.get("subject", "")),
                    None if e.get("correct") is None else bool(e["correct"]),
                )
                for e in entries
            ]
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"fixations[{qid!r}]: {e}") from e
        out[qid] = FixationSequence.make(qid, recs)
    return out


def detect_fixations_dispersion(
    samples: list[tuple[float, float, float]],
    max_dispersion: float = 25.0,
    min_duration: float = 0.08,
) -> list[FixationRecord]:
    """Dispersion-threshold fixation detector for raw gaze samples.

    Convenience utility for users holding raw (x, y, t) gaze streams; the
    toolkit's own pipelines accept precomputed fixations and never call this.
    A window is a fixation when (max_x - min_x) + (max_y - min_y) stays within
    ``max_dispersion`` for at least ``min_duration`` seconds; the emitted
    record sits at the window centroid with the window's onset time.
    """
    out: list[FixationRecord] = []
    i, n = 0, len(samples)
    while i < n:
        j = i + 1
        xs = [samples[i][0]]
        ys = [samples[i][1]]
        while j < n:
            xs.append(samples[j][0])
            ys.append(samples[j][1])
            if (max(xs) - min(xs)) + (max(ys) - min(ys)) > max_dispersion:
                xs.pop()
                ys.pop()
                break
            j += 1
        if samples[j - 1][2] - samples[i][2] >= min_duration:
            out.append(
                FixationRecord(float(np.mean(xs)), float(np.mean(ys)), samples[i][2])
            )
            i = j
        else:
            i += 1
    return out
