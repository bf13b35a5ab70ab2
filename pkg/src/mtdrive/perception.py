"""The pluggable perception boundary of the closed loop.

Two perceptors produce per-frame estimates (theta_hat, delta_hat, C1, C2):

* :class:`GroundTruthPerceptor` reads the simulator's truth and corrupts it
  with configurable gaussian noise, class flips, and a frame delay - the
  ablation baseline that isolates the controllers from the network.
* :class:`NNPerceptor` runs one model forward per frame: the heading head is
  denormalized, the segmentation mask goes through the row-band midpoint
  path prediction to a lateral offset, and the class heads are argmaxed.

Path prediction scans a band of image rows, finds the left/right lane-line
pixel clusters per row, and converts the midpoint's offset from the image
center into meters via the known lane width. Rows failing to show two
clusters are skipped; fewer than ``min_rows`` usable rows signals
no-detection, in which case the NN perceptor holds the previous offset for
a bounded number of frames before declaring the lane lost.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import data as dt
from .models import Model


class LaneLostError(Exception):
    """Path prediction found no lane for more consecutive frames than allowed."""


@dataclass
class PerceptionOutput:
    theta_hat: float
    delta_hat: float
    c1: str
    c2: str
    latency_frames: int = 0


@dataclass
class NoiseSpec:
    theta_sigma: float = 0.0     # rad
    delta_sigma: float = 0.0     # m
    class_flip_prob: float = 0.0
    latency_frames: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.theta_sigma < 0 or self.delta_sigma < 0:
            raise ValueError("noise sigmas must be nonnegative")
        if not 0.0 <= self.class_flip_prob < 1.0:
            raise ValueError("class_flip_prob must be in [0,1)")
        if self.latency_frames < 0:
            raise ValueError("latency_frames must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "theta_sigma": self.theta_sigma,
            "delta_sigma": self.delta_sigma,
            "class_flip_prob": self.class_flip_prob,
            "latency_frames": self.latency_frames,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


@dataclass
class GroundTruth:
    theta: float
    delta: float
    c1: str
    c2: str


class GroundTruthPerceptor:
    """Ground truth plus noise, with an optional whole-frame delay line."""

    def __init__(self, noise: NoiseSpec | None = None):
        self.noise = noise or NoiseSpec()
        self._rng = np.random.default_rng(np.random.SeedSequence(self.noise.seed))
        self._delay: deque[PerceptionOutput] = deque()

    def perceive(self, truth: GroundTruth) -> PerceptionOutput:
        n = self.noise
        theta_hat = truth.theta + (self._rng.normal(0.0, n.theta_sigma) if n.theta_sigma > 0 else 0.0)
        delta_hat = truth.delta + (self._rng.normal(0.0, n.delta_sigma) if n.delta_sigma > 0 else 0.0)
        c1, c2 = truth.c1, truth.c2
        if n.class_flip_prob > 0:
            if self._rng.random() < n.class_flip_prob:
                c1 = str(self._rng.choice([c for c in dt.C1_CLASSES if c != c1]))
            if self._rng.random() < n.class_flip_prob:
                c2 = str(self._rng.choice([c for c in dt.C2_CLASSES if c != c2]))
        out = PerceptionOutput(theta_hat, delta_hat, c1, c2, n.latency_frames)
        self._delay.append(out)
        if len(self._delay) > n.latency_frames + 1:
            self._delay.popleft()
        return self._delay[0]


# ---------------------------------------------------------------------------
# path prediction


@dataclass
class PathPredictConfig:
    lane_width: float = 4.0
    band: tuple[float, float] = (0.4, 0.6)  # fraction of image height scanned
    threshold: float = 0.5
    min_rows: int = 3
    min_width_px: float = 2.0
    max_fallback_frames: int = 10

    def to_dict(self) -> dict:
        return {
            "lane_width": self.lane_width,
            "band": list(self.band),
            "threshold": self.threshold,
            "min_rows": self.min_rows,
            "min_width_px": self.min_width_px,
            "max_fallback_frames": self.max_fallback_frames,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PathPredictConfig":
        cfg = cls()
        return cls(
            lane_width=float(d.get("lane_width", cfg.lane_width)),
            band=tuple(d.get("band", cfg.band)),
            threshold=float(d.get("threshold", cfg.threshold)),
            min_rows=int(d.get("min_rows", cfg.min_rows)),
            min_width_px=float(d.get("min_width_px", cfg.min_width_px)),
            max_fallback_frames=int(d.get("max_fallback_frames", cfg.max_fallback_frames)),
        )


def _row_clusters(row: np.ndarray) -> list[float]:
    """Centers of consecutive runs of True pixels."""
    idx = np.flatnonzero(row)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [idx.size - 1]))
    return [float(idx[a : b + 1].mean()) for a, b in zip(starts, ends)]


def path_predict(seg_mask: np.ndarray, config: PathPredictConfig | None = None) -> float | None:
    """Lateral offset (m, positive right of lane center) from a mask, or None.

    The mask is thresholded, rows in the lookahead band are scanned for a
    left and a right lane-line cluster, and the per-row midpoint offsets are
    converted to meters via lane_width / lane_pixel_width and medianed.
    """
    config = config or PathPredictConfig()
    mask = np.asarray(seg_mask, dtype=np.float64)
    if mask.ndim == 3:
        mask = mask[0]
    if mask.ndim != 2:
        raise ValueError(f"path_predict: expected [1,H,W] or [H,W] mask, got {mask.shape}")
    if mask.size and (mask.min() < -1e-9 or mask.max() > 1.0 + 1e-9):
        raise ValueError("path_predict: mask values must lie in [0,1]")
    h, w = mask.shape
    binary = mask >= config.threshold
    center_col = (w - 1) / 2.0
    row_lo = int(config.band[0] * h)
    row_hi = max(int(config.band[1] * h), row_lo + 1)
    estimates = []
    for r in range(row_lo, min(row_hi, h)):
        clusters = _row_clusters(binary[r])
        if len(clusters) < 2:
            continue
        left, right = clusters[0], clusters[-1]
        width_px = right - left
        if width_px < config.min_width_px:
            continue
        lane_center = (left + right) / 2.0
        estimates.append((center_col - lane_center) * config.lane_width / width_px)
    if len(estimates) < config.min_rows:
        return None
    return float(np.median(estimates))


class NNPerceptor:
    """Single-forward-pass network perception with path-prediction fallback."""

    def __init__(self, model: Model, theta_norm: float, config: PathPredictConfig | None = None):
        self.model = model
        self.theta_norm = float(theta_norm)
        self.config = config or PathPredictConfig()
        self._last_delta: float | None = None
        self._misses = 0

    def perceive(self, image: np.ndarray) -> PerceptionOutput:
        c, h, w = self.model.config.input_shape
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (c, h, w):
            raise ad.ShapeError(f"perceive: image shape {image.shape} != model input {(c, h, w)}")
        out = self.model.forward(image[None], graph=None, train=False)
        theta_hat = float(out.heading.data[0, 0]) * self.theta_norm
        mask_probs = ad.sigmoid_array(out.seg_logits.data[0])
        delta = path_predict(mask_probs, self.config)
        if delta is None:
            self._misses += 1
            if self._last_delta is None or self._misses > self.config.max_fallback_frames:
                raise LaneLostError(f"no lane detection for {self._misses} consecutive frames")
            delta = self._last_delta
        else:
            self._misses = 0
            self._last_delta = delta
        c1 = dt.C1_CLASSES[int(np.argmax(out.c1_logits.data[0]))]
        c2 = dt.C2_CLASSES[int(np.argmax(out.c2_logits.data[0]))]
        return PerceptionOutput(theta_hat, float(delta), c1, c2, 0)
