"""Closed-loop episode execution, static/dynamic metrics, and reports.

One episode steps the loop: project the vehicle onto the track for ground
truth, perceive (ground truth + noise, or a rendered frame through the
network), apply the Stanley and PI controllers, advance the plant, log.
Episodes terminate on lap completion, corridor exit / lane loss
(``lane_departure``), or the step budget (``max_steps``).

Dynamic measures follow the moving-vehicle convention: steps with
v > metric_speed_floor contribute; theta_dmae is the mean absolute error of
the heading estimate against track truth, and dma_delta is the mean
absolute lateral offset against a zero reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import control as ct
from . import data as dt
from . import perception as pc
from . import track as tk

TERMINATIONS = ("completed", "lane_departure", "max_steps")

_FLOAT_COLS = (
    "t", "s", "x", "y", "psi", "v",
    "theta_true", "theta_hat", "delta_true", "delta_hat",
    "steer_cmd", "accel_cmd",
)
_STR_COLS = ("c1_true", "c1_hat", "c2_true", "c2_hat")
EPISODE_COLUMNS = _FLOAT_COLS + _STR_COLS


@dataclass
class EpisodeConfig:
    v_ref: float = 15.0
    dt: float = 0.05
    max_steps: int = 20000
    seed: int = 0
    laps: int = 1
    start_s: float = 0.0
    start_offset: float = 0.0       # initial delta, + = right of centerline
    start_yaw_offset: float = 0.0   # initial vehicle yaw minus tangent heading
    start_speed: float | None = None  # None -> flying start at v_ref
    metric_speed_floor: float = 0.5

    def to_dict(self) -> dict:
        return {
            "v_ref": self.v_ref,
            "dt": self.dt,
            "max_steps": self.max_steps,
            "seed": self.seed,
            "laps": self.laps,
            "start_s": self.start_s,
            "start_offset": self.start_offset,
            "start_yaw_offset": self.start_yaw_offset,
            "start_speed": self.start_speed,
            "metric_speed_floor": self.metric_speed_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


@dataclass
class EpisodeLog:
    columns: dict[str, list]
    termination: str
    dt: float
    track_name: str = ""

    def __post_init__(self):
        if self.termination not in TERMINATIONS:
            raise ValueError(f"unknown termination {self.termination!r}")

    def __len__(self) -> int:
        return len(self.columns["t"])

    def array(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name], dtype=np.float64)

    def to_csv(self, path) -> None:
        lines = [",".join(EPISODE_COLUMNS)]
        n = len(self)
        for i in range(n):
            vals = [repr(float(self.columns[c][i])) for c in _FLOAT_COLS]
            vals += [self.columns[c][i] for c in _STR_COLS]
            lines.append(",".join(vals))
        lines.append(f"# termination,{self.termination}")
        lines.append(f"# dt,{self.dt!r}")
        lines.append(f"# track,{self.track_name}")
        Path(path).write_text("\n".join(lines) + "\n")


def parse_episode_csv(path) -> EpisodeLog:
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    if tuple(header) != EPISODE_COLUMNS:
        raise ValueError(f"{path}: unexpected episode CSV header")
    columns: dict[str, list] = {c: [] for c in EPISODE_COLUMNS}
    termination, dt_val, track_name = "max_steps", 0.05, ""
    for line in lines[1:]:
        if line.startswith("# "):
            key, _, value = line[2:].partition(",")
            if key == "termination":
                termination = value
            elif key == "dt":
                dt_val = float(value)
            elif key == "track":
                track_name = value
            continue
        parts = line.split(",")
        for c, raw in zip(EPISODE_COLUMNS, parts):
            columns[c].append(float(raw) if c in _FLOAT_COLS else raw)
    return EpisodeLog(columns=columns, termination=termination, dt=dt_val, track_name=track_name)


def run_episode(
    track: tk.CurvatureTrack,
    perceptor,
    stanley: ct.StanleyParams,
    pi: ct.PIParams,
    plant: ct.PlantParams,
    config: EpisodeConfig,
    rig: dt.CameraRig | None = None,
) -> EpisodeLog:
    """Drive one episode of lane keeping (lane-change input held at 0)."""
    if config.v_ref <= 0 or config.dt <= 0 or config.max_steps <= 0:
        raise ValueError("episode config must have positive v_ref, dt, max_steps")
    if pi.dtau != config.dt:
        raise ValueError(f"PI sample time {pi.dtau} does not match episode dt {config.dt}")
    centerline = track.centerline()
    c1_norm = stanley.resolved_c1(plant)
    is_nn = isinstance(perceptor, pc.NNPerceptor)
    rig = rig or dt.CameraRig()
    if is_nn:
        _, mh, mw = perceptor.model.config.input_shape

    x0, y0, psi0, _ = centerline.frame_at(config.start_s)
    nx, ny = -math.sin(psi0), math.cos(psi0)
    state = ct.VehicleState(
        x=x0 - config.start_offset * nx,
        y=y0 - config.start_offset * ny,
        psi=psi0 + config.start_yaw_offset,
        v=config.v_ref if config.start_speed is None else config.start_speed,
    )
    prev_steer_state = 0.0
    pi_state = ct.PIState()
    s_hint: float | None = config.start_s
    prev_s = config.start_s
    progress = 0.0
    target = config.laps * track.length if track.closed else track.length

    columns: dict[str, list] = {c: [] for c in EPISODE_COLUMNS}
    termination = "max_steps"

    for step in range(config.max_steps):
        try:
            proj = centerline.project((state.x, state.y), s_hint)
        except tk.OutOfCorridorError:
            termination = "lane_departure"
            break
        s_hint = proj.s
        ds = proj.s - prev_s
        if track.closed:
            ds %= track.length
            if ds > track.length / 2.0:
                ds -= track.length
        wrapped = track.closed and proj.s < prev_s and ds > 0
        progress += ds
        prev_s = proj.s

        theta_true = ct.wrap_angle(proj.tangent_heading - state.psi)
        truth = pc.GroundTruth(
            theta=theta_true,
            delta=proj.delta,
            c1=dt.label_road_type(theta_true),
            c2="C2F",  # no traffic in closed-loop episodes
        )
        if is_nn:
            spec = dt.SceneSpec(
                offset=proj.delta,
                heading=theta_true,
                curvature=proj.curvature,
                lane_width=track.lane_width,
                resolution=(mw, mh),
            )
            frame = dt.render_frame(spec, rig)
            try:
                est = perceptor.perceive(frame.image)
            except pc.LaneLostError:
                termination = "lane_departure"
                break
        else:
            est = perceptor.perceive(truth)

        steer_cmd, prev_steer_state = ct.stanley_step(
            est.theta_hat, est.delta_hat, state.v, 0, prev_steer_state, stanley, c1_norm
        )
        accel_cmd, pi_state = ct.pi_step(state.v, config.v_ref, pi_state, pi)

        row = (
            step * config.dt, proj.s, state.x, state.y, state.psi, state.v,
            theta_true, est.theta_hat, proj.delta, est.delta_hat,
            steer_cmd, accel_cmd, truth.c1, est.c1, truth.c2, est.c2,
        )
        for c, v in zip(EPISODE_COLUMNS, row):
            columns[c].append(v)

        state = ct.vehicle_step(state, ct.ControlCommand(steer_cmd, accel_cmd), config.dt, plant)

        if track.closed:
            if wrapped and progress >= 0.99 * target:
                termination = "completed"
                break
        elif proj.s >= track.length - 2.0 * centerline.ds:
            termination = "completed"
            break

    return EpisodeLog(columns=columns, termination=termination, dt=config.dt, track_name=track.name)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricReport:
    theta_dmae: float | None = None
    dma_delta: float | None = None
    seg_accuracy: float | None = None
    seg_precision: float | None = None
    seg_recall: float | None = None
    seg_f1: float | None = None
    heading_mae: float | None = None
    c1_accuracy: float | None = None
    c2_accuracy: float | None = None
    distance: float | None = None
    mean_speed: float | None = None
    label: str = ""


def dynamic_metrics(log: EpisodeLog, speed_floor: float = 0.5) -> tuple[float, float]:
    """(theta_dmae, dma_delta) over moving timesteps (v > speed_floor)."""
    if len(log) == 0:
        raise ValueError("dynamic_metrics: empty episode log")
    v = log.array("v")
    moving = v > speed_floor
    if not moving.any():
        raise ValueError("dynamic_metrics: no moving steps in log")
    theta_err = np.abs(log.array("theta_hat") - log.array("theta_true"))[moving]
    delta_abs = np.abs(log.array("delta_true"))[moving]
    return float(theta_err.mean()), float(delta_abs.mean())


def seg_metrics(pred_mask: np.ndarray, gt_mask: np.ndarray) -> tuple[float, float, float, float]:
    """(accuracy, precision, recall, f1) from pixel-wise counts; 0/0 -> 0."""
    pred = np.asarray(pred_mask)
    gt = np.asarray(gt_mask)
    if pred.shape != gt.shape:
        raise ValueError(f"seg_metrics: shape mismatch {pred.shape} vs {gt.shape}")
    p = pred > 0.5
    g = gt > 0.5
    tp = float(np.sum(p & g))
    tn = float(np.sum(~p & ~g))
    fp = float(np.sum(p & ~g))
    fn = float(np.sum(~p & g))
    total = tp + tn + fp + fn
    accuracy = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return accuracy, precision, recall, f1


def episode_metrics(log: EpisodeLog, speed_floor: float = 0.5) -> MetricReport:
    theta_dmae, dma_delta = dynamic_metrics(log, speed_floor)
    v = log.array("v")
    c1t, c1h = log.columns["c1_true"], log.columns["c1_hat"]
    c2t, c2h = log.columns["c2_true"], log.columns["c2_hat"]
    n = len(log)
    return MetricReport(
        theta_dmae=theta_dmae,
        dma_delta=dma_delta,
        heading_mae=float(np.abs(log.array("theta_hat") - log.array("theta_true")).mean()),
        c1_accuracy=sum(a == b for a, b in zip(c1t, c1h)) / n,
        c2_accuracy=sum(a == b for a, b in zip(c2t, c2h)) / n,
        distance=float(np.sum(v * log.dt)),
        mean_speed=float(v.mean()),
        label=log.track_name,
    )


def static_eval(model, dataset: dt.Dataset, split: str = "test") -> MetricReport:
    """Table-2-style static metrics of a trained model on a dataset split."""
    from . import autodiff as ad

    frames = dataset.load_frames(split)
    if not frames:
        raise ValueError(f"static_eval: no frames in split {split!r}")
    tp = tn = fp = fn = 0.0
    heading_errs = []
    c1_hits = c2_hits = 0
    for f in frames:
        out = model.forward(f.image[None], graph=None, train=False)
        pred = ad.sigmoid_array(out.seg_logits.data[0]) >= 0.5
        g = f.lane_mask[0] > 0.5
        tp += float(np.sum(pred & g))
        tn += float(np.sum(~pred & ~g))
        fp += float(np.sum(pred & ~g))
        fn += float(np.sum(~pred & g))
        theta_hat = float(out.heading.data[0, 0]) * dataset.theta_norm
        heading_errs.append(abs(theta_hat - f.theta))
        c1_hits += dt.C1_CLASSES[int(np.argmax(out.c1_logits.data[0]))] == f.c1
        c2_hits += dt.C2_CLASSES[int(np.argmax(out.c2_logits.data[0]))] == f.c2
    total = tp + tn + fp + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return MetricReport(
        seg_accuracy=(tp + tn) / total if total else 0.0,
        seg_precision=precision,
        seg_recall=recall,
        seg_f1=2.0 * precision * recall / (precision + recall) if precision + recall else 0.0,
        heading_mae=float(np.mean(heading_errs)),
        c1_accuracy=c1_hits / len(frames),
        c2_accuracy=c2_hits / len(frames),
        label=split,
    )


_METRIC_FIELDS = (
    "label", "theta_dmae", "dma_delta", "seg_accuracy", "seg_precision", "seg_recall",
    "seg_f1", "heading_mae", "c1_accuracy", "c2_accuracy", "distance", "mean_speed",
)


def metrics_to_csv(path, reports: list[MetricReport], terminations: list[str] | None = None) -> None:
    header = ",".join(_METRIC_FIELDS) + ",termination"
    lines = [header]
    terms = terminations or [""] * len(reports)
    for rep, term in zip(reports, terms):
        vals = []
        for name in _METRIC_FIELDS:
            v = getattr(rep, name)
            vals.append(v if isinstance(v, str) else ("" if v is None else repr(float(v))))
        vals.append(term)
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# report generation


def _moving_mean(x: np.ndarray, window: int = 50) -> np.ndarray:
    if len(x) < 2:
        return x
    w = min(window, len(x))
    kernel = np.ones(w) / w
    return np.convolve(x, kernel, mode="same")


def emit_report(logs: list[EpisodeLog], metrics: list[MetricReport], out_dir, tracks=None) -> list[Path]:
    """Write episode CSVs, a metrics CSV, and the four per-episode plots.

    Per episode i: episode_<i>.csv, heading_vs_s_<i>.svg, offset_vs_s_<i>.svg,
    curvature_profile_<i>.svg, trajectory_<i>.svg; plus one metrics.csv.
    An empty metrics list still writes the header-only metrics.csv.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    metrics_path = out / "metrics.csv"
    metrics_to_csv(metrics_path, metrics, [log.termination for log in logs] if logs else None)
    written.append(metrics_path)

    for i, log in enumerate(logs):
        csv_path = out / f"episode_{i:03d}.csv"
        log.to_csv(csv_path)
        written.append(csv_path)

        s = log.array("s")
        track = tracks[i] if tracks else None

        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(s, log.array("theta_true"), color="tab:red", lw=0.6, alpha=0.5, label="theta true")
        ax.plot(s, log.array("theta_hat"), color="tab:blue", lw=0.6, alpha=0.5, label="theta estimated")
        ax.plot(s, _moving_mean(log.array("theta_hat")), color="tab:blue", lw=1.4, label="estimate, 50-step mean")
        ax.set_xlabel("arc length s (m)")
        ax.set_ylabel("heading angle (rad)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        p = out / f"heading_vs_s_{i:03d}.svg"
        fig.savefig(p)
        plt.close(fig)
        written.append(p)

        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(s, log.array("delta_true"), color="tab:blue", lw=0.6, alpha=0.5, label="lateral offset")
        ax.plot(s, _moving_mean(log.array("delta_true")), color="tab:blue", lw=1.4, label="50-step mean")
        ax.axhline(0.0, color="tab:red", lw=0.8, label="reference (0)")
        ax.set_xlabel("arc length s (m)")
        ax.set_ylabel("lateral offset (m)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        p = out / f"offset_vs_s_{i:03d}.svg"
        fig.savefig(p)
        plt.close(fig)
        written.append(p)

        fig, ax = plt.subplots(figsize=(8, 3))
        if track is not None:
            ax.plot(track.stations, track.curvatures, lw=1.0)
        elif len(s) > 1:
            psi_u = np.unwrap(log.array("psi"))
            ds_steps = np.maximum(np.diff(s), 1e-6)
            ax.plot(s[1:], np.diff(psi_u) / ds_steps, lw=0.8)
        ax.set_xlabel("arc length s (m)")
        ax.set_ylabel("curvature (1/m)")
        fig.tight_layout()
        p = out / f"curvature_profile_{i:03d}.svg"
        fig.savefig(p)
        plt.close(fig)
        written.append(p)

        fig, ax = plt.subplots(figsize=(5, 5))
        if track is not None:
            cl = track.centerline()
            ax.plot(cl.x, cl.y, color="0.6", lw=0.8, label="centerline")
        ax.plot(log.array("x"), log.array("y"), color="tab:blue", lw=0.9, label="vehicle")
        ax.set_aspect("equal")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        p = out / f"trajectory_{i:03d}.svg"
        fig.savefig(p)
        plt.close(fig)
        written.append(p)

    return written
