"""Quantitative evaluation: PSNR, homography warps, and rotation-pair consistency.

Two views that differ by a pure camera rotation are related by the pixel
homography ``K R K^-1`` independent of scene depth, so re-rendered views can
be scored against each other without ground-truth geometry: warp one view
onto the other and take PSNR over the overlap, averaged across both warp
directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .geometry import (
    CameraIntrinsics,
    Pose,
    look_rotation,
    relative_rotation,
    rotation_homography,
)

__all__ = [
    "ConsistencyReport",
    "consistency_eval",
    "pair_consistency",
    "psnr",
    "warp_by_homography",
]

#: Minimum fraction of frame overlap below which a consistency score is
#: meaningless and refused.
MIN_OVERLAP_FRACTION = 0.05


def _as_image(x: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValueError(f"{name} must be HxW or HxWxC, got shape {arr.shape}")
    return arr


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio in dB over the masked pixels, peak 1.0.

    Identical inputs return ``math.inf`` as a distinguished sentinel rather
    than any large float.
    """
    a = _as_image(a, "a")
    b = _as_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if mask is None:
        mask = np.ones(a.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {a.shape[:2]}")
    if not mask.any():
        raise ValueError("PSNR over an empty mask is undefined")
    diff = (a - b)[mask]
    mse = float(np.mean(np.square(diff)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def warp_by_homography(
    image: np.ndarray, homography: np.ndarray, out_size: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-warp ``image`` into a frame related by ``homography``.

    ``homography`` maps homogeneous source pixels (u, v, 1) to destination
    pixels, so each destination pixel is pulled from ``H^-1 (u, v, 1)`` with
    bilinear sampling. Returns ``(warped, valid)`` where ``valid`` marks
    destination pixels whose source coordinate lies inside the source frame
    and in front of the camera; invalid pixels are zero-filled. Homographies
    are interpreted as projective camera maps (positive determinant up to
    scale), so orientation-reversing maps such as mirror flips have no valid
    pixels.
    """
    image = _as_image(image, "image")
    homography = np.asarray(homography, dtype=np.float64)
    if homography.shape != (3, 3) or not np.isfinite(homography).all():
        raise ValueError("homography must be a finite 3x3 matrix")
    singular_values = np.linalg.svd(homography, compute_uv=False)
    if singular_values[0] == 0.0 or singular_values[-1] <= singular_values[0] * 1e-12:
        raise ValueError("homography is singular")
    inverse = np.linalg.inv(homography)
    # A homography is only defined up to scale, and a negative scale flips the
    # sign of the homogeneous w used for the behind-camera test. Camera maps
    # K R K^-1 have determinant +1 at their physical scale, so dividing by the
    # real cube root of the determinant recovers that canonical representative.
    inverse = inverse / np.cbrt(np.linalg.det(inverse))

    out_h, out_w = int(out_size[0]), int(out_size[1])
    src_h, src_w = image.shape[:2]
    vv, uu = np.mgrid[0:out_h, 0:out_w]
    pts = np.stack([uu.ravel(), vv.ravel(), np.ones(out_h * out_w)])
    src = inverse @ pts
    w = src[2]
    in_front = w > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(in_front, src[0] / w, -1.0)
        y = np.where(in_front, src[1] / w, -1.0)
    valid = in_front & (x >= 0.0) & (x <= src_w - 1) & (y >= 0.0) & (y <= src_h - 1)

    coords = np.stack([y, x])
    flat = image.reshape(src_h, src_w, -1)
    channels = [
        map_coordinates(flat[:, :, c], coords, order=1, mode="constant", cval=0.0)
        for c in range(flat.shape[2])
    ]
    warped = np.stack(channels, axis=-1).reshape(out_h, out_w, flat.shape[2])
    warped[~valid.reshape(out_h, out_w)] = 0.0
    if image.ndim == 2:
        warped = warped[:, :, 0]
    return warped, valid.reshape(out_h, out_w)


@dataclass(frozen=True)
class ConsistencyReport:
    """Masked-PSNR consistency of a pure-rotation view pair, both directions."""

    psnr_extreme_to_mid: float
    psnr_mid_to_extreme: float
    mean: float
    overlap_extreme_to_mid: float
    overlap_mid_to_extreme: float

    def to_json_dict(self) -> dict:
        """JSON-safe dict; infinite PSNR becomes the string sentinel "inf"."""
        out = {}
        for key, value in self.__dict__.items():
            out[key] = "inf" if math.isinf(value) else float(value)
        return out


def _one_direction(
    source_image: np.ndarray,
    target_image: np.ndarray,
    intrinsics: CameraIntrinsics,
    source_pose: Pose,
    target_pose: Pose,
) -> tuple[float, float]:
    rotation = relative_rotation(source_pose, target_pose)
    homography = rotation_homography(intrinsics, rotation)
    warped, valid = warp_by_homography(
        source_image, homography, target_image.shape[:2]
    )
    overlap = float(valid.mean())
    if overlap < MIN_OVERLAP_FRACTION:
        raise ValueError("insufficient overlap between the rotated views")
    return psnr(target_image, warped, valid), overlap


def pair_consistency(
    mid_image: np.ndarray,
    extreme_image: np.ndarray,
    intrinsics: CameraIntrinsics,
    mid_pose: Pose,
    extreme_pose: Pose,
) -> ConsistencyReport:
    """Score a (mid, extreme) pure-rotation pair by warping each onto the other.

    Both poses must share one camera position; the score in each direction is
    the masked PSNR between one image and the homography warp of the other,
    and ``mean`` averages the two directions.
    """
    if not np.allclose(mid_pose.translation, extreme_pose.translation, atol=1e-9):
        raise ValueError("consistency pairs must be pure rotations (shared camera position)")
    e2m, overlap_e2m = _one_direction(
        extreme_image, mid_image, intrinsics, extreme_pose, mid_pose
    )
    m2e, overlap_m2e = _one_direction(
        mid_image, extreme_image, intrinsics, mid_pose, extreme_pose
    )
    return ConsistencyReport(
        psnr_extreme_to_mid=e2m,
        psnr_mid_to_extreme=m2e,
        mean=(e2m + m2e) / 2.0,
        overlap_extreme_to_mid=overlap_e2m,
        overlap_mid_to_extreme=overlap_m2e,
    )


def consistency_eval(state, yaw: float, pitch: float) -> ConsistencyReport:
    """Rotation-consistency of a synthesized scene at (yaw, pitch) degrees.

    Renders the scene's completed views at the half rotation (yaw/2, pitch/2)
    and the full rotation (yaw, pitch) from the scene's base pose — pure
    rotations, no translation — then scores the pair with
    :func:`pair_consistency` under the state's accumulation strategy.
    """
    from .pipeline import render_view

    base = state.base_pose
    mid_pose = Pose(base.rotation @ look_rotation(yaw / 2.0, pitch / 2.0), base.translation)
    extreme_pose = Pose(base.rotation @ look_rotation(yaw, pitch), base.translation)
    mid_image = render_view(state, mid_pose)
    extreme_image = render_view(state, extreme_pose)
    return pair_consistency(
        mid_image, extreme_image, state.intrinsics, mid_pose, extreme_pose
    )
