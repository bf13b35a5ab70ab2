"""Multi-task UNet variants, their losses, training stages, and complexity.

Three variants share one layout: an encoder backbone, a mirrored decoder
ending in a 1-channel segmentation head at input resolution, and a pose
subnet hanging off the deepest encoder feature (two shared convs, global
average pooling, three parallel FC branches for heading regression and the
two 3-way classifications).

``plain``    double-conv blocks, no encoder-to-decoder skip connections
``residual`` double-conv blocks with identity/projection skip-adds, plus
             channel-concat skip connections into the decoder
``ds``       the residual layout with depthwise-separable convolutions

Heads return raw values: the heading output is unactivated, C1/C2 outputs
are logits (per-class sigmoid for C1 and softmax for C2 are applied where
the losses and class predictions consume them).
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, ShapeError, Tensor

log = logging.getLogger("mtdrive.models")

VARIANTS = ("plain", "residual", "ds")

PROB_EPS = 1e-12


@dataclass
class ModelConfig:
    variant: str = "residual"
    input_shape: tuple[int, int, int] = (3, 64, 48)  # (channels, height, width)
    encoder_widths: tuple[int, ...] = (8, 16, 32, 64)
    pose_fc_width: int = 32
    dropout_rate: float = 0.5
    loss_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)  # (w_S, w_R, w_C1, w_C2)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.encoder_widths = tuple(int(v) for v in self.encoder_widths)
        self.loss_weights = tuple(float(v) for v in self.loss_weights)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if len(self.encoder_widths) < 1:
            raise ValueError("encoder_widths must be nonempty")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if any(w < 0 for w in self.loss_weights):
            raise ValueError("loss weights must be nonnegative")
        _, h, w = self.input_shape
        depth = len(self.encoder_widths) - 1
        if h % (1 << depth) or w % (1 << depth):
            raise ValueError(
                f"input {h}x{w} not divisible by 2^{depth} required by {len(self.encoder_widths)} encoder levels"
            )

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "input_shape": list(self.input_shape),
            "encoder_widths": list(self.encoder_widths),
            "pose_fc_width": self.pose_fc_width,
            "dropout_rate": self.dropout_rate,
            "loss_weights": list(self.loss_weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            variant=d.get("variant", "residual"),
            input_shape=tuple(d.get("input_shape", (3, 64, 48))),
            encoder_widths=tuple(d.get("encoder_widths", (8, 16, 32, 64))),
            pose_fc_width=int(d.get("pose_fc_width", 32)),
            dropout_rate=float(d.get("dropout_rate", 0.5)),
            loss_weights=tuple(d.get("loss_weights", (1.0, 1.0, 1.0, 1.0))),
        )

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class ModelOutputs:
    seg_logits: Tensor | None  # [B,1,H,W], None for pose-only forwards
    heading: Tensor            # [B,1], normalized heading estimate
    c1_logits: Tensor          # [B,3]
    c2_logits: Tensor          # [B,3]


# ---------------------------------------------------------------------------
# layers


class _Conv:
    def __init__(self, model: "Model", name: str, cin: int, cout: int, k: int, separable: bool):
        self.name, self.cin, self.cout, self.k = name, cin, cout, k
        self.padding = k // 2
        self.separable = separable and k > 1
        rng = model._init_rng
        if self.separable:
            self.dw = model._add_param(f"{name}.dw", rng.normal(0.0, np.sqrt(2.0 / (k * k)), (cin, 1, k, k)))
            self.pw = model._add_param(f"{name}.pw", rng.normal(0.0, np.sqrt(2.0 / cin), (cout, cin, 1, 1)))
        else:
            self.w = model._add_param(
                f"{name}.w", rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), (cout, cin, k, k))
            )
        self.b = model._add_param(f"{name}.b", np.zeros(cout))

    def param_count(self) -> int:
        if self.separable:
            return self.dw.size + self.pw.size + self.b.size
        return self.w.size + self.b.size

    def __call__(self, g: Graph | None, x: Tensor, tally: list | None):
        if self.separable:
            out = ad.depthwise_separable_conv2d(g, x, self.dw, self.pw, self.b, padding=self.padding)
        else:
            out = ad.conv2d(g, x, self.w, self.b, stride=1, padding=self.padding)
        if tally is not None:
            oh, ow = out.shape[2], out.shape[3]
            if self.separable:
                macs = (self.cin * self.k * self.k + self.cin * self.cout) * oh * ow
            else:
                macs = self.cout * self.cin * self.k * self.k * oh * ow
            tally.append((self.name, self.param_count(), macs))
        return out


class _Dense:
    def __init__(self, model: "Model", name: str, fin: int, fout: int):
        self.name, self.fin, self.fout = name, fin, fout
        rng = model._init_rng
        self.w = model._add_param(f"{name}.w", rng.normal(0.0, np.sqrt(2.0 / fin), (fin, fout)))
        self.b = model._add_param(f"{name}.b", np.zeros(fout))

    def param_count(self) -> int:
        return self.w.size + self.b.size

    def __call__(self, g: Graph | None, x: Tensor, tally: list | None):
        out = ad.dense(g, x, self.w, self.b)
        if tally is not None:
            tally.append((self.name, self.param_count(), self.fin * self.fout))
        return out


class _Block:
    """conv-relu-conv (+ skip add for residual variants), then relu."""

    def __init__(self, model: "Model", name: str, cin: int, cout: int, variant: str):
        sep = variant == "ds"
        self.conv1 = _Conv(model, f"{name}.conv1", cin, cout, 3, sep)
        self.conv2 = _Conv(model, f"{name}.conv2", cout, cout, 3, sep)
        self.residual = variant in ("residual", "ds")
        self.proj = _Conv(model, f"{name}.proj", cin, cout, 1, False) if self.residual and cin != cout else None

    def __call__(self, g: Graph | None, x: Tensor, tally: list | None):
        h = ad.relu(g, self.conv1(g, x, tally))
        h = self.conv2(g, h, tally)
        if self.residual:
            skip = self.proj(g, x, tally) if self.proj is not None else x
            h = ad.residual_add(g, h, skip)
        return ad.relu(g, h)


class Model:
    """A built multi-task UNet: parameters, layer graph, forward pass."""

    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self.forward_count = 0
        self._init_rng = np.random.default_rng(np.random.SeedSequence(seed))

        widths = config.encoder_widths
        cin = config.input_shape[0]
        variant = config.variant
        self._skips = variant in ("residual", "ds")

        self._enc: list[_Block] = []
        prev = cin
        for i, w in enumerate(widths):
            self._enc.append(_Block(self, f"enc{i}", prev, w, variant))
            prev = w

        deep = widths[-1]
        sep = variant == "ds"
        self._pose_conv1 = _Conv(self, "pose.conv1", deep, deep, 3, sep)
        self._pose_conv2 = _Conv(self, "pose.conv2", deep, deep, 3, sep)
        self._branches: dict[str, tuple[_Dense, _Dense]] = {}
        for branch, out_dim in (("heading", 1), ("c1", 3), ("c2", 3)):
            fc1 = _Dense(self, f"pose.{branch}.fc1", deep, config.pose_fc_width)
            fc2 = _Dense(self, f"pose.{branch}.fc2", config.pose_fc_width, out_dim)
            self._branches[branch] = (fc1, fc2)

        self._dec: list[_Block] = []
        for i in range(len(widths) - 2, -1, -1):
            dec_in = widths[i + 1] + (widths[i] if self._skips else 0)
            self._dec.append(_Block(self, f"dec{i}", dec_in, widths[i], variant))
        self._seg_head = _Conv(self, "seg_head", widths[0], 1, 1, False)

        del self._init_rng  # init is one-shot; forward never draws from it

    def _add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self.params[name] = t
        return t

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def forward(
        self,
        x,
        graph: Graph | None = None,
        train: bool = False,
        rng: np.random.Generator | None = None,
        include_seg: bool = True,
        tally: list | None = None,
    ) -> ModelOutputs:
        self.forward_count += 1
        xt = x if isinstance(x, Tensor) else Tensor(x)
        c, h, w = self.config.input_shape
        if xt.data.ndim != 4 or xt.shape[1:] != (c, h, w):
            raise ShapeError(f"forward: expected input [B,{c},{h},{w}], got {xt.shape}")
        rate = self.config.dropout_rate

        feats: list[Tensor] = []
        cur = xt
        for i, blk in enumerate(self._enc):
            cur = blk(graph, cur, tally)
            feats.append(cur)
            if i < len(self._enc) - 1:
                cur = ad.maxpool2(graph, cur)
        bottleneck = feats[-1]

        p = ad.relu(graph, self._pose_conv1(graph, bottleneck, tally))
        p = ad.relu(graph, self._pose_conv2(graph, p, tally))
        gap = ad.global_avg_pool(graph, p)
        heads: dict[str, Tensor] = {}
        for branch in ("heading", "c1", "c2"):
            fc1, fc2 = self._branches[branch]
            z = ad.dropout(graph, gap, rate, train, rng)
            z = ad.relu(graph, fc1(graph, z, tally))
            z = ad.dropout(graph, z, rate, train, rng)
            heads[branch] = fc2(graph, z, tally)

        seg = None
        if include_seg:
            d = bottleneck
            n = len(self._enc)
            for j, i in enumerate(range(n - 2, -1, -1)):
                d = ad.upsample2_nearest(graph, d)
                if self._skips:
                    d = ad.concat_channels(graph, [d, feats[i]])
                d = self._dec[j](graph, d, tally)
            seg = self._seg_head(graph, d, tally)

        return ModelOutputs(seg, heads["heading"], heads["c1"], heads["c2"])

    def save(self, path) -> None:
        """Checkpoint parameters plus a JSON config sidecar (<path>.json)."""
        ad.save_checkpoint(path, self.params)
        sidecar = {"config": self.config.to_dict(), "seed": self.seed}
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Model":
        sidecar = json.loads(Path(str(path) + ".json").read_text())
        model = build_model(ModelConfig.from_dict(sidecar["config"]), seed=int(sidecar.get("seed", 0)))
        values = ad.load_checkpoint(path)
        missing = set(model.params) - set(values)
        extra = set(values) - set(model.params)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, value in values.items():
            if model.params[name].shape != value.shape:
                raise ValueError(f"checkpoint tensor {name}: shape {value.shape} != {model.params[name].shape}")
            model.params[name].data = value.copy()
        return model


def build_model(config: ModelConfig, seed: int) -> Model:
    return Model(config, seed)


# ---------------------------------------------------------------------------
# losses


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def seg_loss(graph: Graph | None, seg_logits: Tensor, mask) -> Tensor:
    """Count-normalized binary cross entropy over lane / background pixels.

    Positive (lane) pixels are weighted by N/(P+N) and negative ones by
    P/(P+N), with P and N counted over the whole batch. Probabilities are
    clamped to [1e-12, 1 - 1e-12] inside the logs.
    """
    logits = _as_array(seg_logits)
    m = _as_array(mask)
    if m.shape != logits.shape:
        raise ShapeError(f"seg_loss: mask shape {m.shape} != logits shape {logits.shape}")
    if m.size == 0:
        raise ValueError("seg_loss: empty mask (P+N == 0)")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("seg_loss: mask values must be exactly 0 or 1")
    total = m.size
    p_count = float(m.sum())
    n_count = total - p_count
    w_pos = n_count / total
    w_neg = p_count / total
    s_raw = ad.sigmoid_array(logits)
    s = np.clip(s_raw, PROB_EPS, 1.0 - PROB_EPS)
    pos = m == 1.0
    value = -w_pos * np.log(s[pos]).sum() - w_neg * np.log(1.0 - s[~pos]).sum()
    out = np.float64(value)

    def bwd(g: np.ndarray):
        live = (s_raw > PROB_EPS) & (s_raw < 1.0 - PROB_EPS)
        gx = np.where(pos, -w_pos * (1.0 - s), w_neg * s) * live
        return (float(g) * gx,)

    return ad.register(graph, np.asarray(out), (seg_logits,) if isinstance(seg_logits, Tensor) else (), bwd)


def reg_loss(graph: Graph | None, heading: Tensor, target) -> Tensor:
    """Half mean squared error between estimated and true normalized heading."""
    pred = _as_array(heading)
    t = _as_array(target)
    if pred.shape != t.shape:
        raise ShapeError(f"reg_loss: target shape {t.shape} != prediction shape {pred.shape}")
    m = pred.shape[0]
    if m < 1:
        raise ValueError("reg_loss: empty batch")
    diff = t - pred
    value = float((diff * diff).sum()) / (2.0 * m)

    def bwd(g: np.ndarray):
        return (float(g) * (pred - t) / m,)

    return ad.register(graph, np.asarray(np.float64(value)), (heading,) if isinstance(heading, Tensor) else (), bwd)


def cls_loss(graph: Graph | None, probs: Tensor, onehot) -> Tensor:
    """Mean cross entropy of 3-class probabilities against one-hot targets."""
    p = _as_array(probs)
    t = _as_array(onehot)
    if p.shape != t.shape or p.ndim != 2:
        raise ShapeError(f"cls_loss: probs {p.shape} vs targets {t.shape}")
    if not np.all((t == 0.0) | (t == 1.0)) or not np.all(t.sum(axis=1) == 1.0):
        raise ValueError("cls_loss: every target row must be one-hot")
    m = p.shape[0]
    pc = np.maximum(p, PROB_EPS)
    value = -(t * np.log(pc)).sum() / m

    def bwd(g: np.ndarray):
        gx = np.where((t > 0.0) & (p > PROB_EPS), -t / (pc * m), 0.0)
        return (float(g) * gx,)

    return ad.register(graph, np.asarray(np.float64(value)), (probs,) if isinstance(probs, Tensor) else (), bwd)


def binary_cls_loss(graph: Graph | None, probs: Tensor, onehot) -> Tensor:
    """Mean per-class binary cross entropy for the sigmoid classification head.

    The one-sided cross entropy of :func:`cls_loss` applied to unnormalized
    sigmoid probabilities has a degenerate minimum at all-ones output (no
    term ever pushes a non-target class down), so argmax class predictions
    from a converged head are meaningless. Training the sigmoid head needs
    the complement term; this is cls_loss plus sum((1-t) * -log(1-p)) / M.
    """
    p = _as_array(probs)
    t = _as_array(onehot)
    if p.shape != t.shape or p.ndim != 2:
        raise ShapeError(f"binary_cls_loss: probs {p.shape} vs targets {t.shape}")
    if not np.all((t == 0.0) | (t == 1.0)) or not np.all(t.sum(axis=1) == 1.0):
        raise ValueError("binary_cls_loss: every target row must be one-hot")
    m = p.shape[0]
    p_lo = np.maximum(p, PROB_EPS)
    q_lo = np.maximum(1.0 - p, PROB_EPS)
    value = -(t * np.log(p_lo) + (1.0 - t) * np.log(q_lo)).sum() / m

    def bwd(g: np.ndarray):
        gx = np.where((t > 0.0) & (p > PROB_EPS), -1.0 / (p_lo * m), 0.0)
        gx = gx + np.where((t == 0.0) & (1.0 - p > PROB_EPS), 1.0 / (q_lo * m), 0.0)
        return (float(g) * gx,)

    return ad.register(graph, np.asarray(np.float64(value)), (probs,) if isinstance(probs, Tensor) else (), bwd)


def weighted_sum(graph: Graph | None, terms: list[tuple[float, Tensor]]) -> Tensor:
    """Scalar combination sum(w_i * t_i); gradient routes w_i to each term."""
    value = np.float64(sum(w * float(_as_array(t)) for w, t in terms))
    tensors = tuple(t for _, t in terms)
    weights = [w for w, _ in terms]

    def bwd(g: np.ndarray):
        return tuple(np.asarray(float(g) * w) for w in weights)

    return ad.register(graph, np.asarray(value), tensors, bwd)


@dataclass
class BatchLabels:
    mask: np.ndarray | None  # [B,1,H,W] binary
    theta: np.ndarray        # [B,1] normalized heading
    c1_onehot: np.ndarray    # [B,3]
    c2_onehot: np.ndarray    # [B,3]


def sub_losses(graph: Graph | None, outputs: ModelOutputs, labels: BatchLabels, with_seg: bool = True):
    """Per-task losses as graph scalars: (seg or None, reg, c1, c2)."""
    l_seg = None
    if with_seg:
        if outputs.seg_logits is None:
            raise ValueError("segmentation loss requested but forward skipped the decoder")
        l_seg = seg_loss(graph, outputs.seg_logits, labels.mask)
    l_reg = reg_loss(graph, outputs.heading, labels.theta)
    l_c1 = binary_cls_loss(graph, ad.sigmoid(graph, outputs.c1_logits), labels.c1_onehot)
    l_c2 = cls_loss(graph, ad.softmax(graph, outputs.c2_logits), labels.c2_onehot)
    return l_seg, l_reg, l_c1, l_c2


def total_loss(graph: Graph | None, outputs: ModelOutputs, labels: BatchLabels, weights) -> Tensor:
    """Weighted sum of the four task losses; w_S == 0 skips the decoder loss."""
    w_s, w_r, w_c1, w_c2 = (float(w) for w in weights)
    if any(w < 0 for w in (w_s, w_r, w_c1, w_c2)):
        raise ValueError("loss weights must be nonnegative")
    if w_s == w_r == w_c1 == w_c2 == 0.0:
        raise ValueError("loss weights must not all be zero")
    l_seg, l_reg, l_c1, l_c2 = sub_losses(graph, outputs, labels, with_seg=w_s > 0.0)
    terms = [(w_r, l_reg), (w_c1, l_c1), (w_c2, l_c2)]
    if w_s > 0.0:
        terms.insert(0, (w_s, l_seg))
    return weighted_sum(graph, terms)


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self._vel = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        for name, t in self.params.items():
            if t.grad is None:
                continue
            v = self._vel[name]
            v *= self.momentum
            v += t.grad
            t.data = t.data - self.lr * v


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._t = 0

    def step(self) -> None:
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self._t
        c2 = 1.0 - b2 ** self._t
        for name, t in self.params.items():
            if t.grad is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * t.grad
            v *= b2
            v += (1.0 - b2) * t.grad * t.grad
            t.data = t.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainSchedule:
    """Stage hyperparameters. Defaults rescale per stage via the factories."""

    epochs: int = 100
    batch_size: int = 1
    lr: float = 1e-4
    momentum: float = 0.9           # pose stage SGD momentum
    lr_decay: float = 0.9           # pose stage decay factor
    lr_decay_every: int = 5         # pose stage decay period (epochs)
    lr_late: float | None = None    # joint stage lr for the late fraction
    late_frac: float = 0.25
    max_steps: int | None = None    # optional hard cap on optimizer steps
    target_loss: float | None = None  # optional early stop on total loss

    @classmethod
    def pose_default(cls) -> "TrainSchedule":
        return cls(epochs=100, batch_size=20, lr=0.01, momentum=0.9, lr_decay=0.9, lr_decay_every=5)

    @classmethod
    def joint_default(cls) -> "TrainSchedule":
        return cls(epochs=100, batch_size=1, lr=1e-4, lr_late=1e-5, late_frac=0.25)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "momentum": self.momentum,
            "lr_decay": self.lr_decay,
            "lr_decay_every": self.lr_decay_every,
            "lr_late": self.lr_late,
            "late_frac": self.late_frac,
            "max_steps": self.max_steps,
            "target_loss": self.target_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSchedule":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


@dataclass
class TrainingSet:
    images: np.ndarray       # [N,3,H,W]
    masks: np.ndarray        # [N,1,H,W] binary
    thetas_norm: np.ndarray  # [N,1]
    c1_onehot: np.ndarray    # [N,3]
    c2_onehot: np.ndarray    # [N,3]

    def __len__(self) -> int:
        return self.images.shape[0]

    def batch(self, idx: np.ndarray) -> BatchLabels:
        return BatchLabels(self.masks[idx], self.thetas_norm[idx], self.c1_onehot[idx], self.c2_onehot[idx])


@dataclass
class EpochStats:
    epoch: int
    seg: float
    reg: float
    c1: float
    c2: float
    total: float
    lr: float


@dataclass
class TrainReport:
    stage: str
    epochs: list[EpochStats] = field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False

    @property
    def final_total(self) -> float:
        return self.epochs[-1].total if self.epochs else float("nan")

    def to_csv(self, path) -> None:
        lines = ["epoch,seg_loss,reg_loss,c1_loss,c2_loss,total_loss,lr"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.seg!r},{e.reg!r},{e.c1!r},{e.c2!r},{e.total!r},{e.lr!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def _stage_lr(stage: str, schedule: TrainSchedule, epoch: int) -> float:
    if stage == "pose_only":
        return schedule.lr * schedule.lr_decay ** (epoch // schedule.lr_decay_every)
    switch = int(np.ceil(schedule.epochs * (1.0 - schedule.late_frac)))
    if schedule.lr_late is not None and epoch >= switch:
        return schedule.lr_late
    return schedule.lr


def train(
    model: Model,
    data: TrainingSet,
    stage: str,
    schedule: TrainSchedule | None = None,
    seed: int = 0,
    loss_weights=None,
) -> TrainReport:
    """Run one training stage and return the per-epoch loss curve.

    ``pose_only`` uses SGD with momentum and zeroes the segmentation weight;
    ``joint`` uses Adam over all four losses. A NaN total loss aborts with a
    diagnostic rather than continuing to step.
    """
    if stage not in ("pose_only", "joint"):
        raise ValueError(f"unknown stage {stage!r}")
    if len(data) == 0:
        raise ValueError("train: empty dataset")
    if schedule is None:
        schedule = TrainSchedule.pose_default() if stage == "pose_only" else TrainSchedule.joint_default()
    weights = tuple(float(w) for w in (loss_weights if loss_weights is not None else model.config.loss_weights))
    if stage == "pose_only":
        weights = (0.0, weights[1], weights[2], weights[3])
    if all(w == 0.0 for w in weights):
        raise ValueError("train: all loss weights are zero")

    ss = np.random.SeedSequence(seed)
    shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    with_seg = weights[0] > 0.0

    if stage == "pose_only":
        opt: SGD | Adam = SGD(model.params, lr=schedule.lr, momentum=schedule.momentum)
    else:
        opt = Adam(model.params, lr=schedule.lr, beta1=0.9)

    report = TrainReport(stage=stage)
    n = len(data)
    degenerate_batches = 0
    steps = 0
    done = False
    for epoch in range(schedule.epochs):
        opt.lr = _stage_lr(stage, schedule, epoch)
        order = shuffle_rng.permutation(n)
        sums = np.zeros(5)
        batches = 0
        for start in range(0, n, schedule.batch_size):
            idx = order[start : start + schedule.batch_size]
            labels = data.batch(idx)
            if with_seg:
                p_count = labels.mask.sum()
                if p_count == 0 or p_count == labels.mask.size:
                    degenerate_batches += 1
                    if degenerate_batches == 1:
                        log.warning("degenerate segmentation batch (P=0 or N=0); loss term vanishes")
            g = Graph()
            outputs = model.forward(data.images[idx], graph=g, train=True, rng=dropout_rng, include_seg=with_seg)
            l_seg, l_reg, l_c1, l_c2 = sub_losses(g, outputs, labels, with_seg=with_seg)
            terms = [(weights[1], l_reg), (weights[2], l_c1), (weights[3], l_c2)]
            if with_seg:
                terms.insert(0, (weights[0], l_seg))
            loss = weighted_sum(g, terms)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"training diverged: non-finite total loss at stage={stage} epoch={epoch} step={steps}"
                )
            g.backward(loss)
            opt.step()
            model.zero_grad()
            steps += 1
            sums += (
                l_seg.item() if with_seg else 0.0,
                l_reg.item(),
                l_c1.item(),
                l_c2.item(),
                value,
            )
            batches += 1
            if schedule.max_steps is not None and steps >= schedule.max_steps:
                done = True
                break
            if schedule.target_loss is not None and value < schedule.target_loss:
                done = True
                report.stopped_early = True
                break
        mean = sums / max(batches, 1)
        report.epochs.append(EpochStats(epoch, mean[0], mean[1], mean[2], mean[3], mean[4], opt.lr))
        if done:
            break
    report.steps = steps
    if degenerate_batches:
        log.warning("%d degenerate segmentation batches seen during %s stage", degenerate_batches, stage)
    return report


# ---------------------------------------------------------------------------
# complexity accounting


@dataclass
class ComplexityReport:
    params: int
    macs: int
    fps: float
    config_hash: str
    layers: list[tuple[str, int, int]] = field(default_factory=list)  # (name, params, macs)


def count_complexity(model: Model, timing_runs: int = 20) -> ComplexityReport:
    """Exact parameter count, analytic MACs at input_shape, measured FPS.

    MACs count the multiplies of convolution and dense layers for a single
    image (pooling, activations, and bias adds are excluded). FPS is the
    median of ``timing_runs`` timed single-image inference passes.
    """
    c, h, w = model.config.input_shape
    x = np.zeros((1, c, h, w))
    tally: list[tuple[str, int, int]] = []
    model.forward(x, graph=None, train=False, tally=tally)
    macs = sum(m for _, _, m in tally)
    params = model.param_count()
    times = []
    for _ in range(max(timing_runs, 20)):
        t0 = time.perf_counter()
        model.forward(x, graph=None, train=False)
        times.append(time.perf_counter() - t0)
    fps = 1.0 / float(np.median(times))
    return ComplexityReport(params=params, macs=macs, fps=fps, config_hash=model.config.hash(), layers=tally)
