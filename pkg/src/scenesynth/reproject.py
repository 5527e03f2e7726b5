"""Shared splat -> trim -> encode -> order path.

Both corpus building and the interactive scene pipeline turn an accumulated
point cloud into the conditioning for outpainting the same way: splat into
the target view, trim the unreliable splat border, encode the trimmed pixels
into tokens, and derive the outward generation order from the known-token
mask. Keeping this in one place guarantees the model trains on exactly the
distribution the pipeline conditions on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, TokenGrid, encode
from .geometry import CameraIntrinsics, PointCloud, Pose, RenderResult, splat_render, trim_border
from .ordering import GenerationOrder, generate_order


@dataclass(frozen=True)
class Reprojection:
    """A splatted view plus its tokenized conditioning.

    ``raw`` is the untrimmed splat; ``trimmed`` has the border erosion
    applied. ``partial.known`` marks tokens reliable enough to condition on;
    ``order`` ranks the remaining tokens outward from the known region.
    """

    raw: RenderResult
    trimmed: RenderResult
    partial: TokenGrid
    order: GenerationOrder


def patch_fractions(mask: np.ndarray, patch: int) -> np.ndarray:
    """Mean of a boolean pixel mask over each patch-aligned tile."""
    mask = np.asarray(mask, dtype=np.float64)
    h, w = mask.shape
    if h % patch or w % patch:
        raise ValueError("mask dimensions must be divisible by the patch size")
    return mask.reshape(h // patch, patch, w // patch, patch).mean(axis=(1, 3))


def reproject_to_tokens(
    cloud: PointCloud,
    intrinsics: CameraIntrinsics,
    pose: Pose,
    codebook: Codebook,
    *,
    coverage_threshold: float = 0.5,
    erode_px: int = 2,
    known_fraction: float = 0.5,
    radius_px: float = 4.0,
    points_per_pixel: int = 8,
) -> Reprojection:
    """Splat a cloud into a view and tokenize it for outpainting.

    A token is *known* when its patch was mostly covered before erosion
    (raw coverage fraction >= known_fraction) and still holds at least one
    trimmed-visible pixel to take colors from. Judging known-ness on the raw
    mask keeps the erosion band — pixels that have scene content behind them,
    just blurrier — from being re-generated as if it were unseen area, while
    colors and codebook distances use only trimmed pixels.
    """
    raw = splat_render(cloud, intrinsics, pose, radius_px, points_per_pixel)
    trimmed = trim_border(raw, coverage_threshold, erode_px)
    raw_visible = raw.coverage >= coverage_threshold
    encoded = encode(trimmed.image, trimmed.visible, codebook, known_fraction)
    covered = patch_fractions(raw_visible, codebook.patch) >= known_fraction
    has_pixels = patch_fractions(trimmed.visible, codebook.patch) > 0.0
    known = covered & has_pixels
    partial = TokenGrid(encoded.tokens, known)
    order = generate_order(known)
    return Reprojection(raw=raw, trimmed=trimmed, partial=partial, order=order)
