"""Run configuration: one JSON file carrying every tunable parameter.

``RunConfig.default()`` is the single source of defaults; ``mtdrive
simulate --print-defaults`` dumps it for provenance. CLI ``--seed``
overrides the file's seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .control import PIParams, PlantParams, StanleyParams
from .models import ModelConfig, TrainSchedule
from .perception import NoiseSpec, PathPredictConfig
from .simulate import EpisodeConfig


@dataclass
class DatasetConfig:
    n: int = 240
    resolution: tuple[int, int] = (48, 64)  # (width, height)
    lane_width: float = 4.0
    split_ratio: float = 11.0
    theta_max: float = 0.1
    c1_balance: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    c2_balance: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    camera_height: float = 1.2
    camera_pitch: float = -0.03
    camera_hfov: float = 1.0471975511965976  # 60 degrees

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "resolution": list(self.resolution),
            "lane_width": self.lane_width,
            "split_ratio": self.split_ratio,
            "theta_max": self.theta_max,
            "c1_balance": list(self.c1_balance),
            "c2_balance": list(self.c2_balance),
            "camera_height": self.camera_height,
            "camera_pitch": self.camera_pitch,
            "camera_hfov": self.camera_hfov,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        base = cls()
        return cls(
            n=int(d.get("n", base.n)),
            resolution=tuple(d.get("resolution", base.resolution)),
            lane_width=float(d.get("lane_width", base.lane_width)),
            split_ratio=float(d.get("split_ratio", base.split_ratio)),
            theta_max=float(d.get("theta_max", base.theta_max)),
            c1_balance=tuple(d.get("c1_balance", base.c1_balance)),
            c2_balance=tuple(d.get("c2_balance", base.c2_balance)),
            camera_height=float(d.get("camera_height", base.camera_height)),
            camera_pitch=float(d.get("camera_pitch", base.camera_pitch)),
            camera_hfov=float(d.get("camera_hfov", base.camera_hfov)),
        )


def _params_to_dict(p) -> dict:
    if isinstance(p, StanleyParams):
        return {"c1": p.c1, "c2": p.c2, "c3": p.c3, "lane_width": p.lane_width, "v_floor": p.v_floor}
    if isinstance(p, PIParams):
        return {"kp": p.kp, "ki": p.ki, "dtau": p.dtau, "windup_limit": p.windup_limit}
    if isinstance(p, PlantParams):
        return {
            "wheelbase": p.wheelbase,
            "max_steer": p.max_steer,
            "max_accel": p.max_accel,
            "grade_accel": p.grade_accel,
            "mass": p.mass,
            "length": p.length,
        }
    raise TypeError(type(p))


@dataclass
class RunConfig:
    seed: int = 0
    track: str = "track7_like"
    perceptor: str = "ground_truth"  # or "nn"
    model_path: str | None = None    # checkpoint for the nn perceptor / eval
    model: ModelConfig = field(default_factory=ModelConfig)
    pose_schedule: TrainSchedule = field(default_factory=TrainSchedule.pose_default)
    joint_schedule: TrainSchedule = field(default_factory=TrainSchedule.joint_default)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    stanley: StanleyParams = field(default_factory=StanleyParams)
    pi: PIParams = field(default_factory=PIParams)
    plant: PlantParams = field(default_factory=PlantParams)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    path_predict: PathPredictConfig = field(default_factory=PathPredictConfig)

    @classmethod
    def default(cls) -> "RunConfig":
        return cls()

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "track": self.track,
            "perceptor": self.perceptor,
            "model_path": self.model_path,
            "model": self.model.to_dict(),
            "pose_schedule": self.pose_schedule.to_dict(),
            "joint_schedule": self.joint_schedule.to_dict(),
            "dataset": self.dataset.to_dict(),
            "stanley": _params_to_dict(self.stanley),
            "pi": _params_to_dict(self.pi),
            "plant": _params_to_dict(self.plant),
            "episode": self.episode.to_dict(),
            "noise": self.noise.to_dict(),
            "path_predict": self.path_predict.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        base = cls()
        return cls(
            seed=int(d.get("seed", base.seed)),
            track=d.get("track", base.track),
            perceptor=d.get("perceptor", base.perceptor),
            model_path=d.get("model_path", base.model_path),
            model=ModelConfig.from_dict(d.get("model", {})),
            pose_schedule=TrainSchedule.from_dict({**TrainSchedule.pose_default().to_dict(), **d.get("pose_schedule", {})}),
            joint_schedule=TrainSchedule.from_dict({**TrainSchedule.joint_default().to_dict(), **d.get("joint_schedule", {})}),
            dataset=DatasetConfig.from_dict(d.get("dataset", {})),
            stanley=StanleyParams(**d.get("stanley", {})) if d.get("stanley") else StanleyParams(),
            pi=PIParams(**d.get("pi", {})) if d.get("pi") else PIParams(),
            plant=PlantParams(**d.get("plant", {})) if d.get("plant") else PlantParams(),
            episode=EpisodeConfig.from_dict(d.get("episode", {})),
            noise=NoiseSpec.from_dict(d.get("noise", {})),
            path_predict=PathPredictConfig.from_dict(d.get("path_predict", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(json.loads(Path(path).read_text()))
