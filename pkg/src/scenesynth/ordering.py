"""Image-specific autoregressive generation orders and local conv masks.

A generation order assigns rank -1 to every visible (already known) pixel
and ranks 0..B-1 to the B background pixels, growing outward from the
visible region's center of mass.  Local mask sets translate an order into
per-position convolution stencils that admit only visible pixels and
strictly-earlier ranks, which is what makes a stack of masked convolutions
autoregressive under the order.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_NEIGHBORS_8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class GenerationOrder:
    """Per-pixel integer ranks: -1 on visible pixels, 0..B-1 on background."""

    rank: np.ndarray

    def __post_init__(self) -> None:
        rank = np.asarray(self.rank)
        if rank.ndim != 2 or not np.issubdtype(rank.dtype, np.integer):
            raise ValueError("rank must be a 2-d integer array")
        bg = np.sort(rank[rank >= 0])
        if bg.size and not np.array_equal(bg, np.arange(bg.size)):
            raise ValueError("background ranks must form a permutation of 0..B-1")
        rank = rank.astype(np.int64, copy=False)
        rank.flags.writeable = False
        object.__setattr__(self, "rank", rank)

    @property
    def background_count(self) -> int:
        return int((self.rank >= 0).sum())

    def positions_by_rank(self) -> np.ndarray:
        """(B, 2) array of (row, col), index b = position holding rank b."""
        rows, cols = np.nonzero(self.rank >= 0)
        ranks = self.rank[rows, cols]
        out = np.empty((ranks.size, 2), np.int64)
        out[ranks, 0] = rows
        out[ranks, 1] = cols
        return out


@dataclass(frozen=True)
class LocalMaskSet:
    """Per-layer, per-output-position k×k admission stencils.

    Layer 0 has kind "first" (a position never admits itself); all later
    layers have kind "later" (self admitted).  Arrays are shared between
    layers of the same kind.
    """

    masks: tuple[np.ndarray, ...]
    layer_kinds: tuple[str, ...]
    kernel: int

    @property
    def layers(self) -> int:
        return len(self.masks)


def center_of_mass(visible: np.ndarray) -> tuple[float, float]:
    """Arithmetic mean (row, col) of visible pixels; error when none."""
    visible = np.asarray(visible, bool)
    rows, cols = np.nonzero(visible)
    if rows.size == 0:
        raise ValueError("center_of_mass of an empty foreground is undefined")
    return float(rows.mean()), float(cols.mean())


def _order_keys(h: int, w: int, center: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(h)[:, None] - center[0]
    cols = np.arange(w)[None, :] - center[1]
    dist2 = rows**2 + cols**2
    angle = np.arctan2(np.broadcast_to(rows, (h, w)), np.broadcast_to(cols, (h, w)))
    angle = np.where(angle < 0, angle + 2 * math.pi, angle)
    return dist2, angle


def generate_order(visible: np.ndarray) -> GenerationOrder:
    """Region-growing order over background pixels.

    The seed is the background pixel nearest the visible center of mass.
    Each subsequent rank goes to the background pixel 8-adjacent to the
    visible-or-ordered set that minimizes (distance to center, spiral angle
    from east, row, col).  Disconnected background falls back to the
    globally nearest unordered pixel and keeps growing.  An all-background
    mask uses the image center as the center of mass.
    """
    visible = np.asarray(visible, bool)
    if visible.ndim != 2 or visible.size == 0:
        raise ValueError("visibility mask must be a non-empty 2-d boolean array")
    h, w = visible.shape
    rank = np.full((h, w), -1, np.int64)
    if visible.all():
        return GenerationOrder(rank)
    if visible.any():
        center = center_of_mass(visible)
    else:
        center = ((h - 1) / 2.0, (w - 1) / 2.0)
    dist2, angle = _order_keys(h, w, center)

    def key(r: int, c: int) -> tuple[float, float, int, int]:
        return (float(dist2[r, c]), float(angle[r, c]), r, c)

    ordered = visible.copy()  # visible or already ranked
    queued = np.zeros((h, w), bool)
    heap: list[tuple[float, float, int, int]] = []

    def push_neighbors(r: int, c: int) -> None:
        for dr, dc in _NEIGHBORS_8:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and not ordered[nr, nc] and not queued[nr, nc]:
                queued[nr, nc] = True
                heapq.heappush(heap, key(nr, nc))

    background = np.argwhere(~visible)
    bg_keys = [key(int(r), int(c)) for r, c in background]
    seed = min(bg_keys)
    next_rank = 0

    def assign(r: int, c: int) -> None:
        nonlocal next_rank
        rank[r, c] = next_rank
        next_rank += 1
        ordered[r, c] = True
        push_neighbors(r, c)

    if visible.any():
        for r, c in np.argwhere(visible):
            push_neighbors(int(r), int(c))
    assign(seed[2], seed[3])

    total_background = len(bg_keys)
    while next_rank < total_background:
        while heap:
            _, _, r, c = heapq.heappop(heap)
            if not ordered[r, c]:
                assign(r, c)
                break
        else:  # disconnected background: jump to the globally nearest pixel
            remaining = min(k for k in bg_keys if not ordered[k[2], k[3]])
            assign(remaining[2], remaining[3])
    return GenerationOrder(rank)


def build_local_masks(order: GenerationOrder, kernel: int = 3, layers: int = 1) -> LocalMaskSet:
    """Admission stencils enforcing `order` for a stack of convolutions.

    Admission rule, uniform over output positions p and in-window q:
    admitted iff rank(q) == -1, or rank(q) < rank(p), or (q == p and the
    layer kind is "later").  Out-of-window positions count as admitted
    (the convolution input is zero-padded there, so they contribute
    nothing either way).
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("kernel must be odd and >= 1")
    if layers < 1:
        raise ValueError("layers must be >= 1")
    half = kernel // 2
    padded = np.pad(order.rank, half, constant_values=-1)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kernel, kernel))
    center = order.rank[:, :, None, None]
    first = (windows == -1) | (windows < center)
    later = first.copy()
    later[:, :, half, half] = True
    first.flags.writeable = False
    later.flags.writeable = False
    masks = (first,) + (later,) * (layers - 1)
    kinds = ("first",) + ("later",) * (layers - 1)
    return LocalMaskSet(masks, kinds, kernel)


def write_order_text(path: str | Path, order: GenerationOrder) -> None:
    """Dump format: `h w` on line 1, then h rows of space-separated ranks."""
    h, w = order.rank.shape
    lines = [f"{h} {w}"]
    lines += [" ".join(str(int(v)) for v in row) for row in order.rank]
    Path(path).write_text("\n".join(lines) + "\n")


def read_order_text(path: str | Path) -> GenerationOrder:
    lines = Path(path).read_text().strip().splitlines()
    h, w = (int(t) for t in lines[0].split())
    if len(lines) != h + 1:
        raise ValueError(f"expected {h} rank rows, found {len(lines) - 1}")
    rank = np.array([[int(t) for t in line.split()] for line in lines[1:]], np.int64)
    if rank.shape != (h, w):
        raise ValueError("rank row widths do not match the header")
    return GenerationOrder(rank)
