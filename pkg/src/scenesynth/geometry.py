"""Pinhole camera geometry, point clouds, and soft z-buffer splatting.

Conventions used throughout the package:

* Images are ``(H, W, 3)`` float arrays with values in ``[0, 1]``. A pixel
  coordinate ``(u, v)`` means column ``u``, row ``v``; the pixel center sits
  exactly at the integer coordinate, so the sample for ``(u, v)`` is
  ``image[v, u]``.
* The camera frame is x-right, y-down, z-forward. Depth is the distance
  along the camera z axis in meters, not the length of the ray.
* A :class:`Pose` maps camera coordinates to world coordinates:
  ``world = rotation @ cam + translation``. The camera center in world
  coordinates is therefore ``translation``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

ORTHO_TOL = 1e-9

POINT_DTYPE = np.dtype(
    [("pos", "<f4", 3), ("color", "u1", 3), ("source", "<u2")]
)

_PC_MAGIC = b"PSPC"
_PC_VERSION = 1


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics for an image of size ``width`` x ``height``."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def matrix(self) -> np.ndarray:
        """3x3 calibration matrix K."""
        return np.array(
            [
                [self.fx, 0.0, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )


def _check_rotation(rotation: np.ndarray) -> np.ndarray:
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    err = np.abs(rotation.T @ rotation - np.eye(3)).max()
    if err > ORTHO_TOL:
        raise ValueError(f"rotation is not orthonormal (error {err:.3e})")
    if abs(np.linalg.det(rotation) - 1.0) > 1e-6:
        raise ValueError("rotation must have determinant +1")
    return rotation


@dataclass(frozen=True)
class Pose:
    """Rigid transform from camera to world coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = _check_rotation(self.rotation)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


def compose_pose(a: Pose, b: Pose) -> Pose:
    """Compose two poses: apply ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert_pose(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def rotation_about_y(angle_rad: float) -> np.ndarray:
    """Yaw: positive angle turns the camera right (+x)."""
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_about_x(angle_rad: float) -> np.ndarray:
    """Pitch: positive angle tilts the camera up (-y) in the y-down frame."""
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_about_z(angle_rad: float) -> np.ndarray:
    """Roll: positive angle rotates the image clockwise in the y-down frame."""
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def look_rotation(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """Rotation for a yaw-then-pitch camera turn, both in degrees."""
    return rotation_about_y(np.deg2rad(yaw_deg)) @ rotation_about_x(np.deg2rad(pitch_deg))


def rotation_angle_deg(rotation: np.ndarray) -> float:
    """Total rotation angle of a rotation matrix, in degrees."""
    cos_theta = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos_theta)))


@dataclass
class DepthMap:
    """Per-pixel metric depth with a validity mask.

    Every valid depth must be finite and strictly positive; this is checked
    at construction so downstream lifts never see nonpositive depth.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise ValueError("depth values and validity mask must share an HxW shape")
        held = self.values[self.valid]
        if held.size and (not np.isfinite(held).all() or (held <= 0).any()):
            raise ValueError("valid depth entries must be finite and positive")


@dataclass
class PointCloud:
    """Colored world-space points.

    Positions are stored as float32 and colors on the 1/255 grid so that the
    on-disk format round-trips bit-exactly.
    """

    positions: np.ndarray
    colors: np.ndarray
    source: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float32).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.source = np.asarray(self.source, dtype=np.uint16).reshape(-1)
        n = len(self.positions)
        if len(self.colors) != n or len(self.source) != n:
            raise ValueError("positions, colors and source ids must align")

    def __len__(self) -> int:
        return len(self.positions)

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(
            np.zeros((0, 3), dtype=np.float32),
            np.zeros((0, 3)),
            np.zeros(0, dtype=np.uint16),
        )


def merge_clouds(clouds: list[PointCloud]) -> PointCloud:
    if not clouds:
        return PointCloud.empty()
    return PointCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.colors for c in clouds]),
        np.concatenate([c.source for c in clouds]),
    )


@dataclass
class RenderResult:
    """Output of :func:`splat_render`.

    ``coverage`` is the accumulated splat opacity per pixel; ``visible``
    starts as ``coverage > 0`` and is tightened by :func:`trim_border`.
    """

    image: np.ndarray
    coverage: np.ndarray
    visible: np.ndarray
    depth: np.ndarray


def snap_colors(colors: np.ndarray) -> np.ndarray:
    """Round colors onto the 1/255 grid used by the point-cloud format."""
    return np.round(np.clip(colors, 0.0, 1.0) * 255.0) / 255.0


def unproject(
    image: np.ndarray,
    depth: DepthMap,
    intrinsics: CameraIntrinsics,
    pose: Pose,
    source: int = 0,
    pixel_mask: np.ndarray | None = None,
) -> PointCloud:
    """Lift valid pixels of an RGB-D view into a world-space point cloud.

    A pixel ``(u, v)`` with depth ``d`` maps to the camera-frame point
    ``((u - cx) / fx * d, (v - cy) / fy * d, d)`` and then through ``pose``
    into world coordinates. ``pixel_mask`` optionally restricts the lift to
    a subset of pixels; it is intersected with ``depth.valid``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be HxWx3")
    h, w = image.shape[:2]
    if depth.values.shape != (h, w):
        raise ValueError("image and depth dimensions disagree")
    if (h, w) != (intrinsics.height, intrinsics.width):
        raise ValueError("intrinsics do not match the image size")

    mask = depth.valid
    if pixel_mask is not None:
        pixel_mask = np.asarray(pixel_mask, dtype=bool)
        if pixel_mask.shape != (h, w):
            raise ValueError("pixel mask shape mismatch")
        mask = mask & pixel_mask

    vs, us = np.nonzero(mask)
    d = depth.values[vs, us]
    if d.size and (d <= 0).any():
        raise ValueError("nonpositive depth at a valid pixel")
    x = (us - intrinsics.cx) / intrinsics.fx * d
    y = (vs - intrinsics.cy) / intrinsics.fy * d
    cam = np.stack([x, y, d], axis=1)
    world = cam @ pose.rotation.T + pose.translation
    colors = snap_colors(image[vs, us])
    src = np.full(len(world), source, dtype=np.uint16)
    return PointCloud(world.astype(np.float32), colors, src)


def splat_render(
    cloud: PointCloud,
    intrinsics: CameraIntrinsics,
    pose: Pose,
    radius_px: float = 4.0,
    points_per_pixel: int = 8,
) -> RenderResult:
    """Render a point cloud with a soft z-buffer splat.

    Every pixel center within ``radius_px`` of a projected point receives the
    point as a candidate with opacity ``1 - (dist / radius_px)^2``. Per pixel
    the ``points_per_pixel`` nearest-in-depth candidates are alpha-composited
    front to back (early-out once accumulated opacity reaches 0.999); the
    composited color is normalized by the accumulated opacity, which is
    reported as ``coverage``. Points behind the camera (z <= 0) are dropped.

    Candidate compositing order is fully determined by
    ``(depth, dist^2, u, v, color)`` so the result never depends on the
    insertion order of the points.
    """
    if radius_px <= 0:
        raise ValueError("radius_px must be positive")
    if points_per_pixel < 1:
        raise ValueError("points_per_pixel must be at least 1")
    h, w = intrinsics.height, intrinsics.width
    image = np.zeros((h, w, 3))
    coverage = np.zeros((h, w))
    depth_out = np.zeros((h, w))
    if len(cloud) == 0:
        return RenderResult(image, coverage, np.zeros((h, w), dtype=bool), depth_out)

    cam = (cloud.positions.astype(np.float64) - pose.translation) @ pose.rotation
    z = cam[:, 2]
    front = z > 0
    cam = cam[front]
    colors = cloud.colors[front]
    z = z[front]
    if z.size == 0:
        return RenderResult(image, coverage, np.zeros((h, w), dtype=bool), depth_out)

    # Projected position split into a principal-point-relative part so that
    # integer shifts of (cx, cy) translate candidates exactly.
    qu = intrinsics.fx * cam[:, 0] / z
    qv = intrinsics.fy * cam[:, 1] / z

    r = int(np.ceil(radius_px)) + 1
    offs = np.arange(-r, r + 1)
    base_u = np.floor(qu + intrinsics.cx).astype(np.int64)
    base_v = np.floor(qv + intrinsics.cy).astype(np.int64)
    pu = base_u[:, None, None] + offs[None, :, None]
    pv = base_v[:, None, None] + offs[None, None, :]
    du = (pu - intrinsics.cx) - qu[:, None, None]
    dv = (pv - intrinsics.cy) - qv[:, None, None]
    dist2 = du * du + dv * dv
    keep = (
        (dist2 <= radius_px * radius_px)
        & (pu >= 0)
        & (pu < w)
        & (pv >= 0)
        & (pv < h)
    )
    if not keep.any():
        return RenderResult(image, coverage, np.zeros((h, w), dtype=bool), depth_out)

    point_idx = np.broadcast_to(np.arange(len(z))[:, None, None], keep.shape)[keep]
    pu = np.broadcast_to(pu, keep.shape)
    pv = np.broadcast_to(pv, keep.shape)
    pix = (pv[keep] * w + pu[keep]).astype(np.int64)
    cd2 = dist2[keep]
    cz = z[point_idx]
    ccol = colors[point_idx]
    cqu = qu[point_idx]
    cqv = qv[point_idx]

    order = np.lexsort(
        (ccol[:, 2], ccol[:, 1], ccol[:, 0], cqv, cqu, cd2, cz, pix)
    )
    pix = pix[order]
    cd2 = cd2[order]
    cz = cz[order]
    ccol = ccol[order]

    starts = np.flatnonzero(np.r_[True, pix[1:] != pix[:-1]])
    counts = np.diff(np.r_[starts, len(pix)])
    group_pix = pix[starts]

    alpha_all = np.clip(1.0 - cd2 / (radius_px * radius_px), 0.0, 1.0)
    flat_color = np.zeros((h * w, 3))
    flat_cov = np.zeros(h * w)
    flat_depth = np.zeros(h * w)
    transmit = np.ones(len(starts))
    for k in range(points_per_pixel):
        has = counts > k
        if not has.any():
            break
        sel = starts[has] + k
        tgt = group_pix[has]
        t = transmit[has]
        active = t > 0.001  # early-out at accumulated opacity >= 0.999
        if not active.any():
            continue
        sel = sel[active]
        tgt = tgt[active]
        t = t[active]
        a = alpha_all[sel]
        wgt = a * t
        flat_color[tgt] += wgt[:, None] * ccol[sel]
        flat_cov[tgt] += wgt
        flat_depth[tgt] += wgt * cz[sel]
        tt = transmit[has]
        tt[active] = t * (1.0 - a)
        transmit[has] = tt

    covered = flat_cov > 0
    flat_color[covered] /= flat_cov[covered][:, None]
    flat_depth[covered] /= flat_cov[covered]
    image = flat_color.reshape(h, w, 3)
    coverage = flat_cov.reshape(h, w)
    depth_out = flat_depth.reshape(h, w)
    return RenderResult(image, coverage, coverage > 0, depth_out)


def trim_border(
    result: RenderResult, coverage_threshold: float = 0.5, erode_px: int = 2
) -> RenderResult:
    """Threshold coverage into a visibility mask and erode its border.

    Erosion uses 8-connectivity and treats out-of-image neighbors as not
    visible, so a fully covered frame still loses an ``erode_px`` band at the
    image boundary. Image and depth are zeroed outside the trimmed mask;
    coverage is kept, which makes the operation idempotent at fixed
    parameters.
    """
    visible = result.coverage >= coverage_threshold
    if erode_px > 0:
        visible = ndimage.binary_erosion(
            visible,
            structure=np.ones((3, 3), dtype=bool),
            iterations=erode_px,
            border_value=0,
        )
    image = np.where(visible[:, :, None], result.image, 0.0)
    depth = np.where(visible, result.depth, 0.0)
    return RenderResult(image, result.coverage.copy(), visible, depth)


def rotation_homography(intrinsics: CameraIntrinsics, rotation_2_from_1: np.ndarray) -> np.ndarray:
    """Pixel homography ``K @ R @ K^-1`` for a pure rotation between views.

    ``rotation_2_from_1`` maps view-1 camera coordinates to view-2 camera
    coordinates; the returned 3x3 matrix maps homogeneous view-1 pixels to
    view-2 pixels and is normalized so ``H[2, 2] == 1``.
    """
    rotation = _check_rotation(rotation_2_from_1)
    k = intrinsics.matrix()
    h = k @ rotation @ np.linalg.inv(k)
    return h / h[2, 2]


def relative_rotation(pose_from: Pose, pose_to: Pose) -> np.ndarray:
    """Rotation taking ``pose_from`` camera coordinates to ``pose_to``."""
    return pose_to.rotation.T @ pose_from.rotation


def write_point_cloud(path, cloud: PointCloud) -> None:
    """Write the binary point-cloud format (magic ``PSPC``, version 1)."""
    rec = np.empty(len(cloud), dtype=POINT_DTYPE)
    rec["pos"] = cloud.positions
    rec["color"] = np.round(np.clip(cloud.colors, 0.0, 1.0) * 255.0).astype(np.uint8)
    rec["source"] = cloud.source
    with open(path, "wb") as fh:
        fh.write(_PC_MAGIC)
        fh.write(struct.pack("<II", _PC_VERSION, len(cloud)))
        fh.write(rec.tobytes())


def read_point_cloud(path) -> PointCloud:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _PC_MAGIC:
            raise ValueError("not a point-cloud file (bad magic)")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _PC_VERSION:
            raise ValueError(f"unsupported point-cloud version {version}")
        rec = np.frombuffer(fh.read(count * POINT_DTYPE.itemsize), dtype=POINT_DTYPE)
        if len(rec) != count:
            raise ValueError("truncated point-cloud file")
    return PointCloud(rec["pos"].copy(), rec["color"].astype(np.float64) / 255.0, rec["source"].copy())
