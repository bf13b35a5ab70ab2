"""Synthetic road scenes: rendering, labeling, and dataset generation.

A scene is a flat-ground world seen through a pinhole camera mounted on the
vehicle: two white lane boundary lines at +/- lane_width/2 around an
arc-shaped centerline, plus an optional lead-car billboard whose projected
bounding-box area drives the distance classes.

Conventions match the rest of the package: the vehicle looks along +x with
+y to its left; ``offset`` is positive when the vehicle sits right of the
lane center; ``heading`` is the label theta, the direction of the lane
tangent in the vehicle frame (positive = lane points left of the nose).

Frame files are a documented little-endian binary (magic ``MTFR``, u32
version/height/width, float32 RGB payload, uint8 mask payload); the dataset
manifest is versioned JSON carrying labels, the split, and the heading
normalization constant.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import models

C1_CLASSES = ("C1L", "C1S", "C1R")  # left turn, straight, right turn
C2_CLASSES = ("C2F", "C2N", "C2C")  # lead car far, nearby, close

C1_THETA_THRESHOLD = 0.006
# the close-distance box-area threshold, expressed resolution-independently
# as a fraction of the frame (3200 px^2 at 640x480)
C2_AREA_FRACTION_TAU = 3200.0 / (640.0 * 480.0)

LINE_HALF_WIDTH = 0.15  # m, half thickness of a painted lane line
SHOULDER = 0.4          # m of asphalt beyond the lane lines
DRAW_NEAR, DRAW_FAR = 0.0, 90.0  # arc range of rendered lane lines
CAR_WIDTH, CAR_HEIGHT = 1.8, 1.5

_SKY = (0.53, 0.78, 0.92)
_GRASS = (0.35, 0.50, 0.25)
_ASPHALT = (0.32, 0.32, 0.34)
_LINE = (1.0, 1.0, 1.0)
_CAR = (0.85, 0.10, 0.10)


def label_road_type(theta: float) -> str:
    """Three-way road type from the heading angle, boundaries inclusive on straight."""
    if not math.isfinite(theta):
        raise ValueError("theta must be finite")
    if theta < -C1_THETA_THRESHOLD:
        return "C1L"
    if theta > C1_THETA_THRESHOLD:
        return "C1R"
    return "C1S"


def label_lead_distance(box_area_fraction: float) -> str:
    """Three-way lead-car distance from the projected box area fraction."""
    if not 0.0 <= box_area_fraction <= 1.0:
        raise ValueError(f"box area fraction must be in [0,1], got {box_area_fraction}")
    if box_area_fraction == 0.0:
        return "C2F"
    if box_area_fraction < C2_AREA_FRACTION_TAU:
        return "C2N"
    return "C2C"


def onehot(name: str, classes: tuple[str, ...]) -> np.ndarray:
    return np.eye(3)[classes.index(name)]


@dataclass(frozen=True)
class CameraRig:
    height: float = 1.2    # m above ground
    pitch: float = -0.03   # rad, negative looks down
    hfov: float = math.radians(60.0)

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("camera must be above the ground plane")
        if not 0.2 < self.hfov < 2.8 or abs(self.pitch) > 0.6:
            raise ValueError("degenerate camera projection (hfov/pitch out of range)")

    def to_dict(self) -> dict:
        return {"height": self.height, "pitch": self.pitch, "hfov": self.hfov}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraRig":
        return cls(**{k: float(d[k]) for k in ("height", "pitch", "hfov") if k in d})


@dataclass
class SceneSpec:
    offset: float = 0.0         # m, vehicle right of lane center when positive
    heading: float = 0.0        # rad, lane tangent direction in the vehicle frame
    curvature: float = 0.0      # 1/m of the local lane centerline
    lane_width: float = 4.0
    lead_car: tuple[float, float] | None = None  # (arc distance m, lateral m)
    resolution: tuple[int, int] = (48, 64)       # (width, height) pixels

    def __post_init__(self):
        if self.lane_width <= 0:
            raise ValueError("lane_width must be positive")
        w, h = self.resolution
        if w < 8 or h < 8:
            raise ValueError("resolution must be at least 8x8")


@dataclass
class LabeledFrame:
    image: np.ndarray        # [3,H,W] float in [0,1]
    lane_mask: np.ndarray    # [1,H,W] binary {0,1}
    theta: float
    c1: str
    c2: str
    box_area_fraction: float


# ---------------------------------------------------------------------------
# projection geometry


def _camera_axes(pitch: float):
    fwd = np.array([math.cos(pitch), 0.0, math.sin(pitch)])
    right = np.array([0.0, -1.0, 0.0])
    down = np.array([math.sin(pitch), 0.0, -math.cos(pitch)])
    return fwd, right, down


def _intrinsics(rig: CameraRig, w: int, h: int):
    fx = (w / 2.0) / math.tan(rig.hfov / 2.0)
    fy = fx
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    return fx, fy, cx, cy


_GRID_CACHE: dict = {}


def _ground_grid(rig: CameraRig, w: int, h: int):
    """Per-pixel ground plane intersections (X forward, Y left) and validity."""
    key = (rig, w, h)
    if key in _GRID_CACHE:
        return _GRID_CACHE[key]
    fwd, right, down = _camera_axes(rig.pitch)
    fx, fy, cx, cy = _intrinsics(rig, w, h)
    u = np.arange(w, dtype=np.float64)
    v = np.arange(h, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    # ray = fwd + a*right + b*down in vehicle coords
    a = (uu - cx) / fx
    b = (vv - cy) / fy
    ray = fwd[None, None, :] + a[..., None] * right[None, None, :] + b[..., None] * down[None, None, :]
    rz = ray[..., 2]
    ground = rz < -1e-9
    t = np.where(ground, -rig.height / np.where(ground, rz, -1.0), np.inf)
    X = t * ray[..., 0]
    Y = t * ray[..., 1]
    _GRID_CACHE[key] = (X, Y, ground)
    return _GRID_CACHE[key]


def _project_points(points: np.ndarray, rig: CameraRig, w: int, h: int):
    """Project Nx3 vehicle-frame points; returns (u, v, in_front)."""
    fwd, right, down = _camera_axes(rig.pitch)
    fx, fy, cx, cy = _intrinsics(rig, w, h)
    rel = points - np.array([0.0, 0.0, rig.height])
    zf = rel @ fwd
    in_front = zf > 0.1
    safe = np.where(in_front, zf, 1.0)
    u = cx + fx * (rel @ right) / safe
    v = cy + fy * (rel @ down) / safe
    return u, v, in_front


def _lane_coords(spec: SceneSpec, X: np.ndarray, Y: np.ndarray):
    """Lateral position ell (left of centerline positive) and arc sigma."""
    th, off, kappa = spec.heading, spec.offset, spec.curvature
    tx, ty = math.cos(th), math.sin(th)
    nx, ny = -math.sin(th), math.cos(th)
    fx_, fy_ = off * nx, off * ny  # nearest centerline point in the vehicle frame
    dx = X - fx_
    dy = Y - fy_
    if abs(kappa) < 1e-9:
        ell = dx * nx + dy * ny
        sigma = dx * tx + dy * ty
        return ell, sigma
    radius = 1.0 / abs(kappa)
    cx_ = fx_ + nx / kappa
    cy_ = fy_ + ny / kappa
    gx = X - cx_
    gy = Y - cy_
    dist = np.hypot(gx, gy)
    ell = math.copysign(1.0, kappa) * (radius - dist)
    u0x, u0y = (fx_ - cx_) / radius, (fy_ - cy_) / radius
    ang = np.arctan2(gy * u0x - gx * u0y, gx * u0x + gy * u0y)
    sigma = ang / kappa
    return ell, sigma


def _lead_car_geometry(spec: SceneSpec):
    """World corners of the lead-car billboard (bl, br, tr, tl order)."""
    d, lat = spec.lead_car
    th, off, kappa = spec.heading, spec.offset, spec.curvature
    tx, ty = math.cos(th), math.sin(th)
    nx, ny = -math.sin(th), math.cos(th)
    fx_, fy_ = off * nx, off * ny
    if abs(kappa) < 1e-9:
        px = fx_ + d * tx + lat * nx
        py = fy_ + d * ty + lat * ny
        nnx, nny = nx, ny
    else:
        radius = 1.0 / abs(kappa)
        cx_ = fx_ + nx / kappa
        cy_ = fy_ + ny / kappa
        ang = d * kappa
        u0x, u0y = (fx_ - cx_) / radius, (fy_ - cy_) / radius
        ca, sa = math.cos(ang), math.sin(ang)
        ux = ca * u0x - sa * u0y
        uy = sa * u0x + ca * u0y
        r_pt = radius - math.copysign(1.0, kappa) * lat
        px = cx_ + r_pt * ux
        py = cy_ + r_pt * uy
        nnx = ca * nx - sa * ny
        nny = sa * nx + ca * ny
    half = CAR_WIDTH / 2.0
    bl = (px + half * nnx, py + half * nny, 0.0)
    br = (px - half * nnx, py - half * nny, 0.0)
    tr = (px - half * nnx, py - half * nny, CAR_HEIGHT)
    tl = (px + half * nnx, py + half * nny, CAR_HEIGHT)
    return np.array([bl, br, tr, tl])


def _box_area_fraction(spec: SceneSpec, rig: CameraRig) -> float:
    """Projected bounding-box area of the lead car as a fraction of the frame."""
    if spec.lead_car is None:
        return 0.0
    w, h = spec.resolution
    corners = _lead_car_geometry(spec)
    u, v, front = _project_points(corners, rig, w, h)
    if not np.all(front):
        return 0.0
    u0, u1 = np.clip(u.min(), 0, w), np.clip(u.max(), 0, w)
    v0, v1 = np.clip(v.min(), 0, h), np.clip(v.max(), 0, h)
    return float(max(u1 - u0, 0.0) * max(v1 - v0, 0.0) / (w * h))


def render_frame(spec: SceneSpec, rig: CameraRig | None = None) -> LabeledFrame:
    """Deterministic rasterization of a scene plus its derived labels."""
    rig = rig or CameraRig()
    w, h = spec.resolution
    X, Y, ground = _ground_grid(rig, w, h)
    ell, sigma = _lane_coords(spec, np.where(ground, X, 0.0), np.where(ground, Y, 0.0))

    half_lane = spec.lane_width / 2.0
    on_road = ground & (np.abs(ell) <= half_lane + SHOULDER) & (sigma > -10.0) & (sigma < DRAW_FAR + 30.0)
    in_arc = (sigma >= DRAW_NEAR) & (sigma <= DRAW_FAR)
    line = ground & in_arc & (
        (np.abs(ell - half_lane) <= LINE_HALF_WIDTH) | (np.abs(ell + half_lane) <= LINE_HALF_WIDTH)
    )

    image = np.empty((3, h, w))
    for c in range(3):
        image[c] = np.where(ground, _GRASS[c], _SKY[c])
        image[c] = np.where(on_road, _ASPHALT[c], image[c])
        image[c] = np.where(line, _LINE[c], image[c])

    mask = line.copy()
    fraction = 0.0
    if spec.lead_car is not None:
        fraction = _box_area_fraction(spec, rig)
        corners = _lead_car_geometry(spec)
        u, v, front = _project_points(corners, rig, w, h)
        if np.all(front):
            uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
            inside = np.ones((h, w), dtype=bool)
            for i in range(4):
                ax, ay = u[i], v[i]
                bx, by = u[(i + 1) % 4], v[(i + 1) % 4]
                cross = (bx - ax) * (vv - ay) - (by - ay) * (uu - ax)
                inside &= cross >= 0.0
            if not inside.any():
                # winding may be reversed depending on view side
                inside = np.ones((h, w), dtype=bool)
                for i in range(4):
                    ax, ay = u[i], v[i]
                    bx, by = u[(i + 1) % 4], v[(i + 1) % 4]
                    cross = (bx - ax) * (vv - ay) - (by - ay) * (uu - ax)
                    inside &= cross <= 0.0
            for c in range(3):
                image[c] = np.where(inside, _CAR[c], image[c])
            mask &= ~inside

    theta = float(spec.heading)
    return LabeledFrame(
        image=image,
        lane_mask=mask[None, :, :].astype(np.float64),
        theta=theta,
        c1=label_road_type(theta),
        c2=label_lead_distance(fraction),
        box_area_fraction=fraction,
    )


# ---------------------------------------------------------------------------
# dataset generation


@dataclass
class ClassBalance:
    c1: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    c2: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        for name, fr in (("c1", self.c1), ("c2", self.c2)):
            if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
                raise ValueError(f"{name} balance must be three nonnegative fractions summing to 1")


def _class_counts(n: int, fractions) -> list[int]:
    """Largest-remainder apportionment of n into three classes."""
    raw = [n * f for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    rema = sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in range(n - sum(counts)):
        counts[rema[i % 3]] += 1
    return counts


def _tau_crossing_distance(resolution, rig: CameraRig, lane_width: float) -> float:
    """Distance at which the lead-car box fraction crosses the C2C threshold."""

    def frac(d):
        return _box_area_fraction(
            SceneSpec(lane_width=lane_width, lead_car=(d, 0.0), resolution=resolution), rig
        )

    lo, hi = 2.0, 300.0
    if frac(lo) < C2_AREA_FRACTION_TAU:
        raise ValueError("unreachable class balance: close class cannot be rendered at this resolution")
    for _ in range(60):
        mid = (lo + hi) / 2.0
        if frac(mid) >= C2_AREA_FRACTION_TAU:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def generate_frames(
    n: int,
    seed: int,
    class_balance: ClassBalance | None = None,
    resolution: tuple[int, int] = (48, 64),
    rig: CameraRig | None = None,
    lane_width: float = 4.0,
    theta_max: float = 0.1,
    max_offset: float = 1.0,
    max_curvature: float = 0.03,
) -> list[tuple[SceneSpec, LabeledFrame]]:
    """Sample scene specs hitting the class-balance targets and render them."""
    if n <= 0:
        raise ValueError("n must be positive")
    balance = class_balance or ClassBalance()
    rig = rig or CameraRig()
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    c1_pool = [name for name, cnt in zip(C1_CLASSES, _class_counts(n, balance.c1)) for _ in range(cnt)]
    c2_pool = [name for name, cnt in zip(C2_CLASSES, _class_counts(n, balance.c2)) for _ in range(cnt)]
    rng.shuffle(c2_pool)

    need_cars = any(c != "C2F" for c in c2_pool)
    d_tau = _tau_crossing_distance(resolution, rig, lane_width) if need_cars else None

    def sample_theta(c1):
        if c1 == "C1S":
            return float(rng.uniform(-C1_THETA_THRESHOLD, C1_THETA_THRESHOLD))
        if c1 == "C1L":
            return float(rng.uniform(-theta_max, -C1_THETA_THRESHOLD * 1.05))
        return float(rng.uniform(C1_THETA_THRESHOLD * 1.05, theta_max))

    def sample_lead(c2):
        if c2 == "C2F":
            return None
        lat = float(rng.uniform(-0.5, 0.5))
        if c2 == "C2C":
            return (float(rng.uniform(4.0, d_tau * 0.97)), lat)
        return (float(rng.uniform(d_tau * 1.05, 60.0)), lat)

    out = []
    for i in range(n):
        c1_target, c2_target = c1_pool[i], c2_pool[i]
        for attempt in range(30):
            spec = SceneSpec(
                offset=float(rng.uniform(-max_offset, max_offset)),
                heading=sample_theta(c1_target),
                curvature=float(rng.uniform(-max_curvature, max_curvature)),
                lane_width=lane_width,
                lead_car=sample_lead(c2_target),
                resolution=resolution,
            )
            frame = render_frame(spec, rig)
            if frame.c1 == c1_target and frame.c2 == c2_target and frame.lane_mask.sum() > 0:
                out.append((spec, frame))
                break
        else:
            raise ValueError(f"unreachable class balance: could not realize ({c1_target}, {c2_target})")
    return out


def theta_normalizer(frames) -> float:
    return max(max(abs(f.theta) for f in frames), 1e-9)


def to_training_set(frames, theta_norm: float) -> models.TrainingSet:
    images = np.stack([f.image for f in frames])
    masks = np.stack([f.lane_mask for f in frames])
    thetas = np.array([[f.theta / theta_norm] for f in frames])
    c1 = np.stack([onehot(f.c1, C1_CLASSES) for f in frames])
    c2 = np.stack([onehot(f.c2, C2_CLASSES) for f in frames])
    return models.TrainingSet(images, masks, thetas, c1, c2)


# ---------------------------------------------------------------------------
# frame files and manifests

_FRAME_MAGIC = b"MTFR"
_FRAME_VERSION = 1
MANIFEST_NAME = "manifest.json"


def write_frame(path, image: np.ndarray, mask: np.ndarray) -> None:
    _, h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(_FRAME_MAGIC)
        fh.write(struct.pack("<III", _FRAME_VERSION, h, w))
        fh.write(np.ascontiguousarray(image, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(mask[0], dtype=np.uint8).tobytes())


def read_frame(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != _FRAME_MAGIC:
            raise ValueError(f"{path}: not a frame file")
        version, h, w = struct.unpack("<III", fh.read(12))
        if version != _FRAME_VERSION:
            raise ValueError(f"{path}: unsupported frame version {version}")
        image = np.frombuffer(fh.read(3 * h * w * 4), dtype="<f4").reshape(3, h, w).astype(np.float64)
        mask = np.frombuffer(fh.read(h * w), dtype=np.uint8).reshape(1, h, w).astype(np.float64)
    return image, mask


def make_dataset(
    out_dir,
    n: int,
    seed: int,
    class_balance: ClassBalance | None = None,
    resolution: tuple[int, int] = (48, 64),
    rig: CameraRig | None = None,
    lane_width: float = 4.0,
    split_ratio: float = 11.0,
    theta_max: float = 0.1,
) -> Path:
    """Render a labeled dataset to ``out_dir`` and return the manifest path.

    The train/test split is ``split_ratio``:1; the manifest records the
    heading normalization constant (max |theta| over the whole set).
    """
    rig = rig or CameraRig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = generate_frames(n, seed, class_balance, resolution, rig, lane_width, theta_max)
    frames = [f for _, f in pairs]
    theta_norm = theta_normalizer(frames)

    split_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    order = split_rng.permutation(n)
    n_test = int(round(n / (split_ratio + 1.0))) if n > 1 else 0
    test_idx = set(int(i) for i in order[:n_test])

    entries = []
    for i, (spec, frame) in enumerate(pairs):
        fname = f"frame_{i:05d}.mtf"
        write_frame(out_dir / fname, frame.image, frame.lane_mask)
        entries.append(
            {
                "file": fname,
                "theta": frame.theta,
                "c1": frame.c1,
                "c2": frame.c2,
                "box_area_fraction": frame.box_area_fraction,
                "offset": spec.offset,
                "curvature": spec.curvature,
                "lead_car": list(spec.lead_car) if spec.lead_car else None,
                "split": "test" if i in test_idx else "train",
            }
        )
    manifest = {
        "version": 1,
        "frame_format": "mtframe-v1",
        "n": n,
        "seed": seed,
        "resolution": list(resolution),
        "lane_width": lane_width,
        "camera": rig.to_dict(),
        "theta_norm": theta_norm,
        "frames": entries,
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


@dataclass
class Dataset:
    root: Path
    manifest: dict

    @property
    def theta_norm(self) -> float:
        return float(self.manifest["theta_norm"])

    @property
    def rig(self) -> CameraRig:
        return CameraRig.from_dict(self.manifest["camera"])

    @property
    def lane_width(self) -> float:
        return float(self.manifest["lane_width"])

    @property
    def resolution(self) -> tuple[int, int]:
        return tuple(self.manifest["resolution"])

    def entries(self, split: str | None = None) -> list[dict]:
        rows = self.manifest["frames"]
        return rows if split is None else [r for r in rows if r["split"] == split]

    def load_frames(self, split: str | None = None) -> list[LabeledFrame]:
        frames = []
        for row in self.entries(split):
            image, mask = read_frame(self.root / row["file"])
            frames.append(
                LabeledFrame(
                    image=image,
                    lane_mask=mask,
                    theta=float(row["theta"]),
                    c1=row["c1"],
                    c2=row["c2"],
                    box_area_fraction=float(row["box_area_fraction"]),
                )
            )
        return frames

    def training_set(self, split: str = "train") -> models.TrainingSet:
        return to_training_set(self.load_frames(split), self.theta_norm)


def load_dataset(manifest_path) -> Dataset:
    path = Path(manifest_path)
    manifest = json.loads(path.read_text())
    if manifest.get("version") != 1 or manifest.get("frame_format") != "mtframe-v1":
        raise ValueError(f"{path}: unsupported manifest")
    return Dataset(root=path.parent, manifest=manifest)
