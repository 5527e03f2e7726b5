"""Patch-level vector quantization: k-means codebook, encode/decode, file IO.

Images are cut into non-overlapping square patches; each patch maps to the
nearest codebook vector, giving a discrete token grid the autoregressive
model operates on.  Encoding measures distance over visible pixels only, so
partially reprojected views quantize by what is actually known.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_CB_MAGIC = b"PSCB"
_CB_VERSION = 1
_CONVERGE_TOL = 1e-6
_MAX_ITERS = 100


@dataclass(frozen=True)
class Codebook:
    """K patch prototypes of side `patch`, stored as float32 rows."""

    patch: int
    vectors: np.ndarray  # (K, patch*patch*3) float32

    def __post_init__(self) -> None:
        vectors = np.ascontiguousarray(self.vectors, np.float32)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise ValueError("vectors must be a (K, D) array with K >= 1")
        if self.patch < 1 or vectors.shape[1] != self.patch * self.patch * 3:
            raise ValueError("vector length must equal patch*patch*3")
        if not np.isfinite(vectors).all():
            raise ValueError("codebook vectors must be finite")
        vectors.flags.writeable = False
        object.__setattr__(self, "vectors", vectors)

    @property
    def size(self) -> int:
        return int(self.vectors.shape[0])


@dataclass(frozen=True)
class TokenGrid:
    """h×w codebook indices plus a known mask (false = to be outpainted)."""

    tokens: np.ndarray
    known: np.ndarray

    def __post_init__(self) -> None:
        tokens = np.asarray(self.tokens)
        known = np.asarray(self.known, bool)
        if tokens.ndim != 2 or tokens.shape != known.shape:
            raise ValueError("tokens and known must share a 2-d shape")
        if not np.issubdtype(tokens.dtype, np.integer):
            raise ValueError("tokens must be integers")
        tokens = tokens.astype(np.int64, copy=False)
        tokens.flags.writeable = False
        known.flags.writeable = False
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "known", known)

    @property
    def shape(self) -> tuple[int, int]:
        return self.tokens.shape


def image_to_patches(image: np.ndarray, patch: int) -> np.ndarray:
    """(H,W,3) -> (gh*gw, patch*patch*3) row-major patch vectors."""
    h, w, _ = image.shape
    if h % patch or w % patch:
        raise ValueError("image dimensions must be divisible by the patch size")
    gh, gw = h // patch, w // patch
    tiles = image.reshape(gh, patch, gw, patch, 3).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(gh * gw, patch * patch * 3)


def patches_to_image(patches: np.ndarray, grid_shape: tuple[int, int], patch: int) -> np.ndarray:
    gh, gw = grid_shape
    tiles = patches.reshape(gh, gw, patch, patch, 3).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(gh * patch, gw * patch, 3)


def _assign(patches: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per patch (ties -> lowest index) and squared dists."""
    d = (
        (patches**2).sum(1, keepdims=True)
        - 2.0 * patches @ centroids.T
        + (centroids**2).sum(1)[None, :]
    )
    np.maximum(d, 0.0, out=d)
    idx = np.argmin(d, axis=1)
    return idx, d[np.arange(len(patches)), idx]


def _kmeans(
    patches: np.ndarray, k: int, seed: int
) -> tuple[np.ndarray, list[float]]:
    """k-means++ seeded Lloyd iterations; returns centroids and the
    post-assignment objective trace."""
    rng = np.random.default_rng(seed)
    n = len(patches)
    centroids = np.empty((k, patches.shape[1]), np.float64)
    centroids[0] = patches[rng.integers(n)]
    best = ((patches - centroids[0]) ** 2).sum(1)
    for i in range(1, k):
        total = best.sum()
        if total <= 0.0:
            centroids[i] = patches[rng.integers(n)]
        else:
            centroids[i] = patches[rng.choice(n, p=best / total)]
        best = np.minimum(best, ((patches - centroids[i]) ** 2).sum(1))

    history: list[float] = []
    for _ in range(_MAX_ITERS):
        assign, dist = _assign(patches, centroids)
        history.append(float(dist.sum()))
        new = centroids.copy()
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, patches)
        nonempty = counts > 0
        new[nonempty] = sums[nonempty] / counts[nonempty, None]
        reseed_dist = dist.copy()
        for ci in np.flatnonzero(~nonempty):
            far = int(np.argmax(reseed_dist))
            new[ci] = patches[far]
            reseed_dist[far] = 0.0
        shift = np.abs(new - centroids).max()
        centroids = new
        if shift < _CONVERGE_TOL:
            break
    return centroids, history


def fit_codebook(
    images: list[np.ndarray], k: int, patch: int, seed: int
) -> Codebook:
    """k-means over all patches of all images, k-means++ initialized.

    Runs Lloyd iterations to convergence (max centroid shift < 1e-6) or 100
    iterations; empty clusters re-seed from the farthest patch.
    """
    if not images:
        raise ValueError("fit_codebook requires at least one image")
    if k < 1:
        raise ValueError("codebook size must be >= 1")
    patches = np.concatenate(
        [image_to_patches(np.asarray(im, np.float64), patch) for im in images]
    )
    centroids, _ = _kmeans(patches, k, seed)
    return Codebook(patch, np.clip(centroids, 0.0, 1.0).astype(np.float32))


def encode(
    image: np.ndarray,
    visible: np.ndarray,
    codebook: Codebook,
    known_fraction: float = 0.5,
) -> TokenGrid:
    """Nearest codebook entry per patch, measured over visible pixels only.

    A token is known iff its patch's visible-pixel fraction reaches
    known_fraction.  Invisible pixel content never affects the result.
    """
    image = np.asarray(image, np.float64)
    visible = np.asarray(visible, bool)
    if image.shape[:2] != visible.shape:
        raise ValueError("image and visibility mask shapes differ")
    p = codebook.patch
    h, w, _ = image.shape
    gh, gw = h // p, w // p
    weights = np.repeat(visible[..., None], 3, axis=2).astype(np.float64)
    x = image_to_patches(image * weights, p)  # zero out invisible content
    wts = image_to_patches(weights, p)
    c = codebook.vectors.astype(np.float64)
    # sum_d w_d (x_d - c_d)^2 with x pre-multiplied by w (w is 0/1)
    d = (x**2).sum(1, keepdims=True) - 2.0 * x @ c.T + wts @ (c.T**2)
    tokens = np.argmin(d, axis=1).reshape(gh, gw)
    frac = image_to_patches(weights, p)[:, ::3].mean(1).reshape(gh, gw)
    known = frac >= known_fraction
    return TokenGrid(tokens, known)


def decode(tokens: TokenGrid, codebook: Codebook) -> np.ndarray:
    """Paste each token's prototype patch; every token must be known."""
    if not tokens.known.all():
        raise ValueError("decode requires a fully known token grid")
    if tokens.tokens.min() < 0 or tokens.tokens.max() >= codebook.size:
        raise ValueError("token index out of codebook range")
    flat = codebook.vectors[tokens.tokens.reshape(-1)].astype(np.float64)
    return patches_to_image(flat, tokens.shape, codebook.patch)


def write_codebook(path: str | Path, codebook: Codebook) -> None:
    payload = codebook.vectors.astype("<f4").tobytes()
    header = _CB_MAGIC + struct.pack("<III", _CB_VERSION, codebook.size, codebook.patch)
    Path(path).write_bytes(header + payload)


def read_codebook(path: str | Path) -> Codebook:
    raw = Path(path).read_bytes()
    if raw[:4] != _CB_MAGIC:
        raise ValueError("not a codebook file (bad magic)")
    version, k, patch = struct.unpack_from("<III", raw, 4)
    if version != _CB_VERSION:
        raise ValueError(f"unsupported codebook version {version}")
    expect = 16 + k * patch * patch * 3 * 4
    if len(raw) != expect:
        raise ValueError("codebook file truncated or oversized")
    vectors = np.frombuffer(raw, "<f4", offset=16).reshape(k, patch * patch * 3)
    return Codebook(patch, vectors)
