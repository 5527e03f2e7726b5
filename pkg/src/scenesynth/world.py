"""Procedural box-room worlds with an exact ray-cast oracle renderer.

Rooms are axis-aligned boxes centered at the origin in a y-down world frame
(the floor is the +y face). Wall textures are analytic, so any camera pose
inside the room can be rendered with exact metric depth; that makes the
renderer usable as ground truth for reprojection, splatting, and consistency
tests. The module also samples training view pairs under rotation/translation
bounds and builds outpainting corpora (reprojected partial token grids with
fully-known oracle labels).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import Codebook, TokenGrid, encode
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    Pose,
    look_rotation,
    rotation_about_x,
    rotation_about_y,
    rotation_about_z,
    rotation_angle_deg,
    snap_colors,
    unproject,
)
from .ordering import GenerationOrder, read_order_text, write_order_text
from .reproject import reproject_to_tokens

# Wall index convention: the face with outward normal +x is wall 0, then -x,
# +y (floor, since the world frame is y-down), -y (ceiling), +z, -z.
WALL_AXES: tuple[tuple[int, float], ...] = (
    (0, 1.0),
    (0, -1.0),
    (1, 1.0),
    (1, -1.0),
    (2, 1.0),
    (2, -1.0),
)

# In-plane texture axes per wall normal axis: (u_axis, v_axis).
_PLANE_AXES: dict[int, tuple[int, int]] = {0: (1, 2), 1: (0, 2), 2: (0, 1)}

_TEXTURE_KINDS = ("smooth", "checker", "stripes")


def _check_color(color) -> tuple[float, float, float]:
    rgb = tuple(float(c) for c in color)
    if len(rgb) != 3 or any(not np.isfinite(c) or c < 0.0 or c > 1.0 for c in rgb):
        raise ValueError(f"colors must be three channels in [0, 1], got {color!r}")
    return rgb


@dataclass(frozen=True)
class WallTexture:
    """Analytic texture on one wall, parameterized in meters.

    ``smooth`` blends base and secondary with low-frequency sinusoids along
    both in-plane axes; ``checker`` and ``stripes`` switch between the two
    colors on a ``period``-sized grid.
    """

    kind: str
    period: float
    base: tuple[float, float, float]
    secondary: tuple[float, float, float]
    phase: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in _TEXTURE_KINDS:
            raise ValueError(f"unknown texture kind {self.kind!r}")
        if not (np.isfinite(self.period) and self.period > 0):
            raise ValueError("texture period must be positive")
        object.__setattr__(self, "base", _check_color(self.base))
        object.__setattr__(self, "secondary", _check_color(self.secondary))
        object.__setattr__(self, "phase", (float(self.phase[0]), float(self.phase[1])))

    def colors_at(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        base = np.array(self.base)
        secondary = np.array(self.secondary)
        if self.kind == "smooth":
            two_pi = 2.0 * np.pi
            t = (
                0.5
                + 0.25 * np.sin(two_pi * (u / self.period + self.phase[0]))
                + 0.25 * np.sin(two_pi * (v / self.period + self.phase[1]))
            )
        elif self.kind == "checker":
            t = (
                np.floor(u / self.period + self.phase[0])
                + np.floor(v / self.period + self.phase[1])
            ) % 2.0
        else:  # stripes run along v, alternating in u
            t = np.floor(u / self.period + self.phase[0]) % 2.0
        return base + (secondary - base) * t[..., None]


@dataclass(frozen=True)
class Decal:
    """Axis-aligned colored rectangle painted over a wall's texture."""

    wall: int
    u0: float
    v0: float
    u1: float
    v1: float
    color: tuple[float, float, float]

    def __post_init__(self):
        if not 0 <= self.wall < 6:
            raise ValueError("decal wall index must be in 0..5")
        if not (self.u0 < self.u1 and self.v0 < self.v1):
            raise ValueError("decal rectangle must have positive extent")
        object.__setattr__(self, "color", _check_color(self.color))


@dataclass(frozen=True)
class RoomSpec:
    """Axis-aligned box room centered at the origin.

    ``extents`` are full side lengths (x, y, z) in meters; with the y-down
    world frame the floor is at ``y = +extents[1] / 2``. The default camera
    start sits at the box center, i.e. at half room height above the floor.
    """

    extents: tuple[float, float, float] = (6.0, 3.0, 4.0)
    walls: tuple[WallTexture, ...] = ()
    decals: tuple[Decal, ...] = ()
    camera_start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    trim_color: tuple[float, float, float] = (0.80, 0.79, 0.76)
    trim_width: float = 0.6
    seed: int = 0

    def __post_init__(self):
        extents = tuple(float(e) for e in self.extents)
        if len(extents) != 3 or any(not np.isfinite(e) or e <= 0 for e in extents):
            raise ValueError("room extents must be three positive side lengths")
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "trim_color", _check_color(self.trim_color))
        if not (np.isfinite(self.trim_width) and self.trim_width >= 0):
            raise ValueError("trim width must be nonnegative")
        walls = tuple(self.walls)
        if not walls:
            walls = tuple(
                WallTexture("smooth", 2.0, (0.5, 0.5, 0.5), (0.7, 0.7, 0.7))
                for _ in range(6)
            )
        if len(walls) != 6 or not all(isinstance(w, WallTexture) for w in walls):
            raise ValueError("rooms need exactly six wall textures")
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "decals", tuple(self.decals))
        start = tuple(float(c) for c in self.camera_start)
        if len(start) != 3:
            raise ValueError("camera start must be a 3-vector")
        object.__setattr__(self, "camera_start", start)
        if not self.contains(np.asarray(start)):
            raise ValueError("camera start must be strictly inside the room")

    @property
    def half_extents(self) -> np.ndarray:
        return np.asarray(self.extents) / 2.0

    def contains(self, position: np.ndarray, margin: float = 0.0) -> bool:
        position = np.asarray(position, dtype=np.float64)
        return bool(np.all(np.abs(position) < self.half_extents - margin))


@dataclass(frozen=True)
class PairSpec:
    """Bounds for sampling a (source, target) view pair.

    The total relative rotation angle lands in ``[min_rotation_deg,
    max_rotation_deg]`` and the translation magnitude in
    ``[0, max_translation_m]``. Individual axis flags select which rotation
    axes may contribute.
    """

    min_rotation_deg: float
    max_rotation_deg: float
    max_translation_m: float = 1.0
    yaw: bool = True
    pitch: bool = True
    roll: bool = False

    def __post_init__(self):
        if not (0.0 <= self.min_rotation_deg <= self.max_rotation_deg):
            raise ValueError("rotation bounds must satisfy 0 <= min <= max")
        if self.max_translation_m < 0:
            raise ValueError("max translation must be nonnegative")


# Pitch is capped regardless of the requested bound: box rooms degenerate
# (floor/ceiling fill the frame) at extreme pitch, so wide-angle schedules
# are exercised in yaw only.
PITCH_LIMIT_DEG = 30.0


def raycast_render(
    room: RoomSpec, intrinsics: CameraIntrinsics, pose: Pose
) -> tuple[np.ndarray, DepthMap]:
    """Render the room exactly by intersecting pixel rays with the six walls.

    Camera-frame ray directions are left unnormalized with z = 1, so the ray
    parameter of a hit *is* its metric depth. Colors are snapped to the 1/255
    grid, which keeps oracle images bit-stable through 8-bit image files.
    """
    position = pose.translation
    if not room.contains(position):
        raise ValueError("camera must be strictly inside the room")
    h, w = intrinsics.height, intrinsics.width
    u = np.arange(w, dtype=np.float64)
    v = np.arange(h, dtype=np.float64)
    dir_cam = np.empty((h, w, 3))
    dir_cam[:, :, 0] = (u[None, :] - intrinsics.cx) / intrinsics.fx
    dir_cam[:, :, 1] = (v[:, None] - intrinsics.cy) / intrinsics.fy
    dir_cam[:, :, 2] = 1.0
    dir_world = dir_cam @ pose.rotation.T

    half = room.half_extents
    best_t = np.full((h, w), np.inf)
    wall_hit = np.full((h, w), -1, dtype=np.int64)
    for wall_index, (axis, sign) in enumerate(WALL_AXES):
        plane = sign * half[axis]
        d_axis = dir_world[:, :, axis]
        b_axis, c_axis = _PLANE_AXES[axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (plane - position[axis]) / d_axis
            t = np.where(np.isfinite(t) & (t > 1e-9), t, np.inf)
            hit_b = position[b_axis] + t * dir_world[:, :, b_axis]
            hit_c = position[c_axis] + t * dir_world[:, :, c_axis]
        in_face = (np.abs(hit_b) <= half[b_axis] + 1e-9) & (
            np.abs(hit_c) <= half[c_axis] + 1e-9
        )
        closer = in_face & (t < best_t)
        best_t = np.where(closer, t, best_t)
        wall_hit = np.where(closer, wall_index, wall_hit)
    if not np.isfinite(best_t).all():
        raise RuntimeError("a ray escaped the room; the box should be closed")

    image = np.zeros((h, w, 3))
    for wall_index, (axis, _) in enumerate(WALL_AXES):
        mask = wall_hit == wall_index
        if not mask.any():
            continue
        u_axis, v_axis = _PLANE_AXES[axis]
        t = best_t[mask]
        uu = position[u_axis] + t * dir_world[:, :, u_axis][mask]
        vv = position[v_axis] + t * dir_world[:, :, v_axis][mask]
        colors = room.walls[wall_index].colors_at(uu, vv)
        for decal in room.decals:
            if decal.wall != wall_index:
                continue
            inside = (
                (uu >= decal.u0) & (uu < decal.u1) & (vv >= decal.v0) & (vv < decal.v1)
            )
            colors[inside] = decal.color
        if room.trim_width > 0:
            # Painted trim: every surface fades to one shared color at its
            # edges, so wall seams are color-continuous. Seams keep depth
            # creases but lose color steps, which is what the soft splat
            # (which blends across seams) needs to stay faithful.
            edge = np.minimum(half[u_axis] - np.abs(uu), half[v_axis] - np.abs(vv))
            weight = np.clip(edge / room.trim_width, 0.0, 1.0)[:, None]
            trim = np.asarray(room.trim_color)
            colors = trim + weight * (colors - trim)
        image[mask] = colors
    image = snap_colors(image)
    return image, DepthMap(best_t, np.ones((h, w), dtype=bool))


def sample_pair(room: RoomSpec, spec: PairSpec, seed: int) -> tuple[Pose, Pose]:
    """Sample a source pose at the room's start position and a target pose.

    The source camera gets a uniform random yaw. The target applies, in the
    source camera frame, per-axis rotations drawn uniformly from
    ``[min, max]`` with random signs (pitch clipped to ±30°) plus a uniform
    random world translation direction with magnitude ``U[0, max]``. Draws
    are rejected until the *total* relative rotation angle lies within the
    requested bounds and the target stays inside the room.
    """
    rng = np.random.default_rng(seed)
    start = np.asarray(room.camera_start, dtype=np.float64)
    src_rotation = look_rotation(float(rng.uniform(0.0, 360.0)), 0.0)
    pose_src = Pose(src_rotation, start)
    lo, hi = spec.min_rotation_deg, spec.max_rotation_deg
    for _ in range(1000):
        yaw = pitch = roll = 0.0
        if spec.yaw:
            yaw = float(rng.uniform(lo, hi)) * (1.0 if rng.integers(2) else -1.0)
        if spec.pitch:
            pitch = float(rng.uniform(lo, hi)) * (1.0 if rng.integers(2) else -1.0)
            pitch = float(np.clip(pitch, -PITCH_LIMIT_DEG, PITCH_LIMIT_DEG))
        if spec.roll:
            roll = float(rng.uniform(lo, hi)) * (1.0 if rng.integers(2) else -1.0)
        relative = (
            rotation_about_y(np.deg2rad(yaw))
            @ rotation_about_x(np.deg2rad(pitch))
            @ rotation_about_z(np.deg2rad(roll))
        )
        angle = rotation_angle_deg(relative)
        if not (lo - 1e-9 <= angle <= hi + 1e-9):
            continue
        direction = rng.normal(size=3)
        norm = np.linalg.norm(direction)
        if norm < 1e-12:
            continue
        magnitude = float(rng.uniform(0.0, spec.max_translation_m))
        target_position = start + direction / norm * magnitude
        if not room.contains(target_position, margin=0.1):
            continue
        return pose_src, Pose(src_rotation @ relative, target_position)
    raise RuntimeError("pair sampling exhausted its rejection budget (1000 attempts)")


# ---------------------------------------------------------------------------
# Training corpus


@dataclass(frozen=True)
class CorpusExample:
    """One training example: a reprojected partial view and its oracle label."""

    index: int
    room_index: int
    stage_index: int
    pose_src: Pose
    pose_tgt: Pose
    src_image: np.ndarray
    src_depth: DepthMap
    tgt_image: np.ndarray
    tgt_depth: DepthMap
    visible: np.ndarray
    partial: TokenGrid
    order: GenerationOrder
    label: TokenGrid

    @property
    def unknown_fraction(self) -> float:
        return float(1.0 - self.partial.known.mean())


@dataclass(frozen=True)
class Corpus:
    examples: tuple[CorpusExample, ...]
    intrinsics: CameraIntrinsics
    curriculum: tuple[float, ...]
    seed: int
    known_fraction: float
    coverage_threshold: float
    erode_px: int

    def __len__(self) -> int:
        return len(self.examples)


def _quantize_depth_mm(depth: DepthMap) -> DepthMap:
    """Snap depth onto the millimeter grid used by the on-disk format.

    Quantizing *before* any depth is consumed makes a corpus reloaded from
    disk reproduce the in-memory corpus exactly.
    """
    values = np.round(depth.values * 1000.0) / 1000.0
    return DepthMap(values, depth.valid.copy())


def stage_pair_specs(
    curriculum: tuple[float, ...] | list[float], max_translation_m: float = 1.0
) -> list[PairSpec]:
    """Per-stage rotation bounds: each stage spans (previous max, stage max].

    The first stage starts at 5° (or the stage max, if smaller) so that
    near-identity pairs — which reproject with nothing left to outpaint and
    would be skipped anyway — stay rare.
    """
    specs = []
    previous = None
    for stage_max in curriculum:
        stage_max = float(stage_max)
        low = min(5.0, stage_max) if previous is None else previous
        if not 0.0 <= low <= stage_max:
            raise ValueError("curriculum stages must be nondecreasing")
        specs.append(PairSpec(low, stage_max, max_translation_m))
        previous = stage_max
    if not specs:
        raise ValueError("curriculum must contain at least one stage")
    return specs


def build_corpus(
    rooms: list[RoomSpec],
    pairs_per_room: int,
    curriculum: tuple[float, ...] | list[float],
    codebook: Codebook,
    intrinsics: CameraIntrinsics,
    *,
    seed: int = 0,
    max_translation_m: float = 1.0,
    known_fraction: float = 0.5,
    coverage_threshold: float = 0.5,
    erode_px: int = 2,
) -> Corpus:
    """Render, reproject, and tokenize view pairs for every room and stage.

    Each pair renders the source view, lifts it with oracle depth, splats it
    into the target pose, trims the splat border, and encodes the result into
    a partial token grid plus its outward generation order; the oracle target
    render, encoded fully visible, is the label. Pairs whose reprojection
    leaves no unknown tokens are skipped. Stages cycle round-robin over the
    pair index, so every stage of the curriculum is represented in every
    room.
    """
    if pairs_per_room <= 0:
        raise ValueError("pairs_per_room must be positive")
    specs = stage_pair_specs(curriculum, max_translation_m)
    examples: list[CorpusExample] = []
    full = np.ones((intrinsics.height, intrinsics.width), dtype=bool)
    for room_index, room in enumerate(rooms):
        for pair_index in range(pairs_per_room):
            stage_index = pair_index % len(specs)
            pair_seed = int(
                np.random.SeedSequence([seed, room_index, pair_index]).generate_state(
                    1, np.uint64
                )[0]
            )
            pose_src, pose_tgt = sample_pair(room, specs[stage_index], pair_seed)
            src_image, src_depth = raycast_render(room, intrinsics, pose_src)
            tgt_image, tgt_depth = raycast_render(room, intrinsics, pose_tgt)
            src_depth = _quantize_depth_mm(src_depth)
            tgt_depth = _quantize_depth_mm(tgt_depth)
            cloud = unproject(src_image, src_depth, intrinsics, pose_src)
            reprojection = reproject_to_tokens(
                cloud,
                intrinsics,
                pose_tgt,
                codebook,
                coverage_threshold=coverage_threshold,
                erode_px=erode_px,
                known_fraction=known_fraction,
            )
            if reprojection.partial.known.all():
                continue
            label = encode(tgt_image, full, codebook, known_fraction)
            examples.append(
                CorpusExample(
                    index=len(examples),
                    room_index=room_index,
                    stage_index=stage_index,
                    pose_src=pose_src,
                    pose_tgt=pose_tgt,
                    src_image=src_image,
                    src_depth=src_depth,
                    tgt_image=tgt_image,
                    tgt_depth=tgt_depth,
                    visible=reprojection.trimmed.visible.copy(),
                    partial=reprojection.partial,
                    order=reprojection.order,
                    label=label,
                )
            )
    return Corpus(
        examples=tuple(examples),
        intrinsics=intrinsics,
        curriculum=tuple(float(c) for c in curriculum),
        seed=seed,
        known_fraction=known_fraction,
        coverage_threshold=coverage_threshold,
        erode_px=erode_px,
    )


# ---------------------------------------------------------------------------
# Corpus disk format: PNG images, 16-bit millimeter depth PNGs, order dumps,
# and a JSON manifest tying them to poses and intrinsics.


def _pose_to_json(pose: Pose) -> dict:
    return {
        "rotation": [float(x) for x in pose.rotation.reshape(-1)],
        "translation": [float(x) for x in pose.translation],
    }


def _pose_from_json(data: dict) -> Pose:
    return Pose(
        np.asarray(data["rotation"], dtype=np.float64).reshape(3, 3),
        np.asarray(data["translation"], dtype=np.float64),
    )


def write_image_png(path: Path, image: np.ndarray) -> None:
    from PIL import Image

    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def read_image_png(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.float64)
    return data / 255.0


def write_depth_png(path: Path, depth: DepthMap) -> None:
    """Store depth as 16-bit millimeters; invalid pixels become zero."""
    from PIL import Image

    mm = np.round(depth.values * 1000.0)
    mm = np.where(depth.valid, mm, 0.0)
    if mm.max(initial=0.0) > np.iinfo(np.uint16).max:
        raise ValueError("depth exceeds the 16-bit millimeter range")
    Image.fromarray(mm.astype(np.uint16)).save(path, format="PNG")


def read_depth_png(path: Path) -> DepthMap:
    from PIL import Image

    with Image.open(path) as img:
        mm = np.asarray(img, dtype=np.float64)
    valid = mm > 0
    values = np.where(valid, mm / 1000.0, 1.0)
    return DepthMap(np.where(valid, values, 0.0), valid)


def write_mask_png(path: Path, mask: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG"
    )


def read_mask_png(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        data = np.asarray(img.convert("L"))
    return data >= 128


def write_corpus(corpus: Corpus, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest_examples = []
    for example in corpus.examples:
        stem = f"ex{example.index:05d}"
        files = {
            "src": f"{stem}_src.png",
            "src_depth": f"{stem}_src_depth.png",
            "tgt": f"{stem}_tgt.png",
            "tgt_depth": f"{stem}_tgt_depth.png",
            "mask": f"{stem}_mask.png",
            "order": f"{stem}_order.txt",
        }
        write_image_png(directory / files["src"], example.src_image)
        write_depth_png(directory / files["src_depth"], example.src_depth)
        write_image_png(directory / files["tgt"], example.tgt_image)
        write_depth_png(directory / files["tgt_depth"], example.tgt_depth)
        write_mask_png(directory / files["mask"], example.visible)
        write_order_text(directory / files["order"], example.order)
        manifest_examples.append(
            {
                "index": example.index,
                "room_index": example.room_index,
                "stage_index": example.stage_index,
                "pose_src": _pose_to_json(example.pose_src),
                "pose_tgt": _pose_to_json(example.pose_tgt),
                "files": files,
            }
        )
    manifest = {
        "version": 1,
        "intrinsics": {
            "width": corpus.intrinsics.width,
            "height": corpus.intrinsics.height,
            "fx": corpus.intrinsics.fx,
            "fy": corpus.intrinsics.fy,
            "cx": corpus.intrinsics.cx,
            "cy": corpus.intrinsics.cy,
        },
        "curriculum": list(corpus.curriculum),
        "seed": corpus.seed,
        "known_fraction": corpus.known_fraction,
        "coverage_threshold": corpus.coverage_threshold,
        "erode_px": corpus.erode_px,
        "examples": manifest_examples,
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def read_corpus(directory: str | Path, codebook: Codebook) -> Corpus:
    """Reload a corpus directory, re-deriving token grids from the codebook.

    Reprojection runs again from the stored images and depths; because depth
    was quantized to millimeters before the original encode, the recomputed
    partial grids and orders match the stored ones bit for bit. The stored
    order file is compared against the recomputation as a consistency check.
    """
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("version") != 1:
        raise ValueError("unsupported corpus manifest version")
    meta = manifest["intrinsics"]
    intrinsics = CameraIntrinsics(
        width=meta["width"],
        height=meta["height"],
        fx=meta["fx"],
        fy=meta["fy"],
        cx=meta["cx"],
        cy=meta["cy"],
    )
    known_fraction = float(manifest["known_fraction"])
    coverage_threshold = float(manifest["coverage_threshold"])
    erode_px = int(manifest["erode_px"])
    full = np.ones((intrinsics.height, intrinsics.width), dtype=bool)
    examples = []
    for entry in manifest["examples"]:
        files = entry["files"]
        pose_src = _pose_from_json(entry["pose_src"])
        pose_tgt = _pose_from_json(entry["pose_tgt"])
        src_image = read_image_png(directory / files["src"])
        src_depth = read_depth_png(directory / files["src_depth"])
        tgt_image = read_image_png(directory / files["tgt"])
        tgt_depth = read_depth_png(directory / files["tgt_depth"])
        cloud = unproject(src_image, src_depth, intrinsics, pose_src)
        reprojection = reproject_to_tokens(
            cloud,
            intrinsics,
            pose_tgt,
            codebook,
            coverage_threshold=coverage_threshold,
            erode_px=erode_px,
            known_fraction=known_fraction,
        )
        stored_order = read_order_text(directory / files["order"])
        if not np.array_equal(stored_order.rank, reprojection.order.rank):
            raise ValueError(
                f"stored order for example {entry['index']} does not match the "
                "reprojection; the corpus files are inconsistent"
            )
        label = encode(tgt_image, full, codebook, known_fraction)
        examples.append(
            CorpusExample(
                index=int(entry["index"]),
                room_index=int(entry["room_index"]),
                stage_index=int(entry["stage_index"]),
                pose_src=pose_src,
                pose_tgt=pose_tgt,
                src_image=src_image,
                src_depth=src_depth,
                tgt_image=tgt_image,
                tgt_depth=tgt_depth,
                visible=read_mask_png(directory / files["mask"]),
                partial=reprojection.partial,
                order=reprojection.order,
                label=label,
            )
        )
    return Corpus(
        examples=tuple(examples),
        intrinsics=intrinsics,
        curriculum=tuple(float(c) for c in manifest["curriculum"]),
        seed=int(manifest["seed"]),
        known_fraction=known_fraction,
        coverage_threshold=coverage_threshold,
        erode_px=erode_px,
    )


# ---------------------------------------------------------------------------
# Shipped fixtures


def default_intrinsics() -> CameraIntrinsics:
    """64x64 pinhole with a 90° horizontal field of view."""
    return CameraIntrinsics(width=64, height=64, fx=32.0, fy=32.0, cx=31.5, cy=31.5)


def fixture_rooms() -> list[RoomSpec]:
    """Eight deterministic rooms used by tests, corpora, and demos.

    Textures are calibrated to be smooth enough that pure-rotation
    homography warps of oracle renders stay above 30 dB masked PSNR, while
    checkerboards and decals keep enough structure for codebooks and
    outpainting to be meaningful.
    """

    def smooth(period, base, secondary, phase=(0.0, 0.0)):
        return WallTexture("smooth", period, base, secondary, phase)

    def checker(period, base, secondary):
        return WallTexture("checker", period, base, secondary)

    def stripes(period, base, secondary):
        return WallTexture("stripes", period, base, secondary)

    rooms = [
        RoomSpec(
            extents=(6.0, 3.0, 4.0),
            walls=(
                smooth(2.5, (0.73, 0.68, 0.64), (0.83, 0.78, 0.71)),
                smooth(2.2, (0.68, 0.71, 0.71), (0.78, 0.81, 0.78), (0.25, 0.0)),
                stripes(2.6, (0.77, 0.76, 0.73), (0.83, 0.82, 0.79)),
                smooth(3.0, (0.77, 0.76, 0.73), (0.83, 0.82, 0.79)),
                checker(1.6, (0.65, 0.68, 0.61), (0.71, 0.74, 0.67)),
                smooth(2.8, (0.72, 0.70, 0.64), (0.62, 0.61, 0.57), (0.0, 0.4)),
            ),
            decals=(
                Decal(4, -1.05, -0.75, -0.35, -0.05, (0.64, 0.58, 0.49)),
                Decal(0, -0.25, -1.05, 0.45, -0.35, (0.65, 0.58, 0.59)),
            ),
        ),
        RoomSpec(
            extents=(5.0, 3.0, 5.0),
            walls=(
                checker(1.6, (0.68, 0.64, 0.67), (0.74, 0.70, 0.73)),
                smooth(2.2, (0.68, 0.73, 0.68), (0.78, 0.81, 0.75)),
                stripes(2.6, (0.83, 0.82, 0.79), (0.77, 0.76, 0.73)),
                smooth(2.6, (0.83, 0.82, 0.79), (0.77, 0.76, 0.73)),
                smooth(2.2, (0.75, 0.67, 0.65), (0.84, 0.77, 0.73), (0.1, 0.6)),
                smooth(2.4, (0.68, 0.68, 0.72), (0.77, 0.78, 0.82)),
            ),
            decals=(
                Decal(5, -0.75, -0.8, -0.05, -0.1, (0.63, 0.63, 0.62)),
                Decal(1, -0.25, -0.3, 0.45, 0.4, (0.58, 0.70, 0.62)),
            ),
        ),
        RoomSpec(
            extents=(7.0, 3.2, 4.2),
            walls=(
                smooth(2.8, (0.68, 0.69, 0.69), (0.78, 0.79, 0.78)),
                checker(1.7, (0.69, 0.66, 0.61), (0.75, 0.72, 0.67)),
                smooth(2.6, (0.77, 0.76, 0.73), (0.83, 0.82, 0.79), (0.3, 0.2)),
                smooth(3.2, (0.83, 0.82, 0.79), (0.77, 0.76, 0.73)),
                stripes(1.6, (0.65, 0.70, 0.70), (0.71, 0.76, 0.76)),
                smooth(2.3, (0.75, 0.70, 0.64), (0.85, 0.80, 0.73)),
            ),
            decals=(
                Decal(4, 0.45, -0.95, 1.15, -0.25, (0.63, 0.58, 0.66)),
                Decal(2, -0.95, -0.75, -0.25, -0.05, (0.66, 0.64, 0.61)),
                Decal(0, -0.65, 0.15, 0.05, 0.85, (0.71, 0.66, 0.58)),
            ),
        ),
        RoomSpec(
            extents=(6.0, 2.8, 5.0),
            walls=(
                stripes(1.8, (0.70, 0.67, 0.69), (0.76, 0.73, 0.75)),
                smooth(2.4, (0.68, 0.72, 0.68), (0.78, 0.82, 0.77), (0.5, 0.1)),
                smooth(2.6, (0.77, 0.76, 0.73), (0.83, 0.82, 0.79)),
                smooth(2.9, (0.83, 0.82, 0.79), (0.77, 0.76, 0.73)),
                smooth(2.2, (0.72, 0.67, 0.68), (0.82, 0.77, 0.78), (0.2, 0.3)),
                checker(1.6, (0.65, 0.67, 0.69), (0.71, 0.73, 0.75)),
            ),
            decals=(
                Decal(4, -0.85, -0.45, -0.15, 0.25, (0.62, 0.62, 0.68)),
            ),
        ),
        RoomSpec(
            extents=(5.5, 3.2, 4.5),
            walls=(
                smooth(2.6, (0.72, 0.70, 0.64), (0.82, 0.80, 0.73)),
                smooth(2.2, (0.68, 0.70, 0.71), (0.77, 0.80, 0.81), (0.4, 0.5)),
                checker(2.6, (0.77, 0.76, 0.73), (0.83, 0.82, 0.79)),
                smooth(3.1, (0.83, 0.82, 0.79), (0.77, 0.76, 0.73)),
                smooth(2.2, (0.75, 0.70, 0.64), (0.85, 0.80, 0.73), (0.6, 0.2)),
                stripes(1.6, (0.65, 0.69, 0.64), (0.71, 0.75, 0.70)),
            ),
            decals=(
                Decal(4, 0.25, -0.85, 0.95, -0.15, (0.67, 0.60, 0.60)),
                Decal(5, -0.75, 0.05, -0.05, 0.75, (0.63, 0.61, 0.52)),
            ),
        ),
        RoomSpec(
            extents=(6.5, 3.0, 3.6),
            walls=(
                smooth(2.2, (0.70, 0.71, 0.64), (0.80, 0.81, 0.73), (0.1, 0.7)),
                stripes(1.7, (0.70, 0.65, 0.66), (0.76, 0.71, 0.72)),
                smooth(2.6, (0.77, 0.76, 0.73), (0.83, 0.82, 0.79), (0.2, 0.2)),
                smooth(2.8, (0.83, 0.82, 0.79), (0.77, 0.76, 0.73)),
                checker(1.8, (0.67, 0.65, 0.69), (0.73, 0.71, 0.75)),
                smooth(2.5, (0.71, 0.71, 0.71), (0.62, 0.62, 0.62), (0.3, 0.5)),
            ),
            decals=(
                Decal(0, -0.45, -0.85, 0.25, -0.15, (0.72, 0.63, 0.54)),
                Decal(4, -1.25, -0.55, -0.55, 0.15, (0.55, 0.62, 0.62)),
            ),
        ),
        RoomSpec(
            extents=(4.8, 2.6, 4.2),
            walls=(
                checker(1.6, (0.69, 0.66, 0.61), (0.75, 0.72, 0.67)),
                smooth(2.2, (0.68, 0.71, 0.72), (0.78, 0.81, 0.82), (0.7, 0.1)),
                stripes(2.6, (0.77, 0.76, 0.73), (0.83, 0.82, 0.79)),
                smooth(2.7, (0.83, 0.82, 0.79), (0.77, 0.76, 0.73)),
                smooth(2.2, (0.74, 0.67, 0.66), (0.84, 0.77, 0.76), (0.0, 0.8)),
                smooth(2.4, (0.68, 0.69, 0.66), (0.78, 0.79, 0.76), (0.5, 0.3)),
            ),
            decals=(
                Decal(5, -0.55, -0.55, 0.15, 0.15, (0.67, 0.67, 0.56)),
            ),
        ),
        RoomSpec(
            extents=(7.2, 3.4, 5.2),
            walls=(
                smooth(3.0, (0.70, 0.67, 0.69), (0.80, 0.77, 0.79), (0.2, 0.6)),
                smooth(2.3, (0.68, 0.72, 0.67), (0.78, 0.82, 0.77)),
                smooth(2.6, (0.77, 0.76, 0.73), (0.83, 0.82, 0.79), (0.4, 0.4)),
                smooth(3.3, (0.83, 0.82, 0.79), (0.77, 0.76, 0.73)),
                stripes(1.9, (0.68, 0.65, 0.70), (0.74, 0.71, 0.76)),
                checker(1.7, (0.65, 0.69, 0.69), (0.71, 0.75, 0.75)),
            ),
            decals=(
                Decal(4, 0.85, -1.05, 1.55, -0.35, (0.68, 0.53, 0.66)),
                Decal(1, -0.75, -0.35, -0.05, 0.35, (0.58, 0.68, 0.68)),
                Decal(3, -1.05, -0.85, -0.35, -0.15, (0.76, 0.75, 0.63)),
            ),
        ),
    ]
    return rooms


def wall_frontal_poses(
    room: RoomSpec, intrinsics: CameraIntrinsics, margin: float = 0.3
) -> list[Pose]:
    """Five poses whose frusta land entirely on a single wall.

    A camera looking squarely at an axis-aligned wall observes constant
    metric depth across the whole frame, which is the regime where the soft
    splat reproduces the input image exactly; these poses are the round-trip
    fixtures. Faces used: +z, -z, +x, -x, and the floor.
    """
    # Integer-exact axis permutations (yaw 0/90/180/-90 and pitch -90): the
    # trigonometric route leaks sin(pi) ~ 1e-16 into the wall-normal
    # direction, which perturbs the last ulp of the depth map and breaks the
    # exact-depth-tie ordering the round-trip guarantee relies on.
    rotations = {
        4: np.eye(3),
        5: np.array([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]),
        0: np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]]),
        1: np.array([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
        2: np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]]),
    }
    max_ray = max(
        (intrinsics.width - 1 - intrinsics.cx) / intrinsics.fx,
        intrinsics.cx / intrinsics.fx,
        (intrinsics.height - 1 - intrinsics.cy) / intrinsics.fy,
        intrinsics.cy / intrinsics.fy,
    )
    half = room.half_extents
    poses = []
    for wall_index in (4, 5, 0, 1, 2):
        axis, sign = WALL_AXES[wall_index]
        u_axis, v_axis = _PLANE_AXES[axis]
        usable = min(half[u_axis], half[v_axis]) - margin
        distance_cap = 2.0 * half[axis] - margin
        distance = min(usable / max_ray, distance_cap)
        if distance <= margin:
            raise ValueError("room is too small for a frontal frustum")
        position = np.zeros(3)
        position[axis] = sign * (half[axis] - distance)
        poses.append(Pose(rotations[wall_index], position))
    return poses
