"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Everything is float64 and numpy-backed. A ``Graph`` is an append-only tape:
forward ops optionally record a node (output id, input tensors, backward
closure), and ``Graph.backward`` walks the tape once in reverse insertion
order. Running any op with ``graph=None`` executes the identical numpy code
path without recording, so tracked and untracked forward values are bitwise
equal.

Supported layer set: conv2d, depthwise-separable conv2d, maxpool2,
upsample2_nearest, concat_channels, dense, global_avg_pool, relu, sigmoid,
softmax (last axis), tanh, dropout, residual_add. Custom fused ops (losses)
can be registered through :func:`register`.
"""

from __future__ import annotations

import struct
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Graph",
    "register",
    "backward",
    "set_finite_checks",
    "conv2d",
    "depthwise_separable_conv2d",
    "maxpool2",
    "upsample2_nearest",
    "concat_channels",
    "dense",
    "global_avg_pool",
    "relu",
    "sigmoid",
    "sigmoid_array",
    "softmax",
    "tanh",
    "dropout",
    "residual_add",
    "eval_layer",
    "save_checkpoint",
    "load_checkpoint",
]


class ShapeError(ValueError):
    """Raised when op inputs do not conform to the op's shape contract."""


_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    """Enable NaN/Inf checking on every op output (debug aid, off by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Tensor:
    """Dense float64 array, optionally a node of a computation graph.

    ``grad`` is lazily allocated and accumulated into by backward passes;
    call :meth:`zero_grad` between optimizer steps. Leaf tensors carry
    ``requires_grad``; tensors produced by ops carry a ``node_id`` on their
    owning graph instead.
    """

    __slots__ = ("data", "grad", "graph", "node_id", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.graph: Graph | None = None
        self.node_id: int | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("inputs", "backward_fn")

    def __init__(self, inputs: tuple[Tensor, ...], backward_fn):
        self.inputs = inputs
        self.backward_fn = backward_fn


class Graph:
    """Append-only tape of ops; topological order equals insertion order."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def record(
        self,
        out_data: np.ndarray,
        inputs: Sequence[Tensor],
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    ) -> Tensor:
        """Append a node and return its output tensor.

        ``backward_fn`` maps the output gradient to one gradient (or None)
        per input, in order.
        """
        out = Tensor(out_data)
        out.graph = self
        out.node_id = len(self._nodes)
        self._nodes.append(_Node(tuple(inputs), backward_fn))
        return out

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every reachable leaf with d(loss)/d(leaf).

        Repeated calls accumulate. The tape is visited exactly once, in
        reverse insertion order.
        """
        if loss.graph is not self or loss.node_id is None:
            raise ValueError("backward: tensor was not produced by this graph")
        if loss.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
        if not self._nodes:
            raise ValueError("backward: graph is empty")
        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        grads[loss.node_id] = np.ones_like(loss.data)
        for nid in range(len(self._nodes) - 1, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self._nodes[nid]
            input_grads = node.backward_fn(g)
            for t, ig in zip(node.inputs, input_grads):
                if ig is None:
                    continue
                if t.graph is self and t.node_id is not None:
                    if grads[t.node_id] is None:
                        grads[t.node_id] = np.zeros_like(t.data)
                    grads[t.node_id] += ig
                elif t.requires_grad:
                    t.accumulate_grad(ig)
            grads[nid] = None  # free as we go


def backward(loss: Tensor, graph: Graph) -> None:
    """Run reverse-mode accumulation of d(loss)/d(parameter) over ``graph``."""
    graph.backward(loss)


def register(
    graph: Graph | None,
    out_data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn,
) -> Tensor:
    """Wrap ``out_data`` as a Tensor, recording the op if a graph is given."""
    if _FINITE_CHECKS and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("op produced non-finite values")
    if graph is None:
        return Tensor(out_data)
    return graph.record(out_data, inputs, backward_fn)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    b, c, _, _ = xp.shape
    sb, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, kh, kw, oh, ow),
        strides=(sb, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return patches.reshape(b, c * kh * kw, oh * ow)


def _col2im(gcols: np.ndarray, xp_shape, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    b, c, hp, wp = xp_shape
    gp = np.zeros((b, c, hp, wp))
    gc = gcols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            gp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gc[:, :, i, j]
    return gp


def conv2d(
    graph: Graph | None,
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation of NCHW input with an OIHW kernel plus bias."""
    xd, kd, bd = _data(x), _data(kernel), _data(bias)
    if xd.ndim != 4 or kd.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input/kernel, got {xd.shape} / {kd.shape}")
    b, cin, h, w = xd.shape
    cout, kcin, kh, kw = kd.shape
    if kcin != cin:
        raise ShapeError(
            f"conv2d: input has {cin} channels but kernel expects {kcin} (input {xd.shape}, kernel {kd.shape})"
        )
    if bd.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bd.shape} != ({cout},)")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    kmat = kd.reshape(cout, cin * kh * kw)
    out = np.matmul(kmat, cols) + bd[:, None]
    out = out.reshape(b, cout, oh, ow)

    def bwd(g: np.ndarray):
        gmat = g.reshape(b, cout, oh * ow)
        gk = np.tensordot(gmat, cols, axes=([0, 2], [0, 2])).reshape(kd.shape)
        gb = gmat.sum(axis=(0, 2))
        gcols = np.matmul(kmat.T, gmat)
        gp = _col2im(gcols, xp.shape, kh, kw, stride, oh, ow)
        gx = gp[:, :, padding : padding + h, padding : padding + w] if padding else gp
        return gx, gk, gb

    return register(graph, out, (x, kernel, bias), bwd)


def depthwise_separable_conv2d(
    graph: Graph | None,
    x: Tensor,
    depthwise_kernel: Tensor,
    pointwise_kernel: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: int | None = None,
) -> Tensor:
    """Per-channel spatial convolution followed by a 1x1 cross-channel mix.

    ``padding=None`` means same-size padding (kernel_size // 2) at stride 1.
    """
    xd, dk, pk, bd = _data(x), _data(depthwise_kernel), _data(pointwise_kernel), _data(bias)
    b, cin, h, w = xd.shape
    if dk.ndim != 4 or dk.shape[1] != 1:
        raise ShapeError(f"depthwise kernel must be [Cin,1,Kh,Kw], got {dk.shape}")
    if dk.shape[0] != cin:
        raise ShapeError(f"depthwise kernel has {dk.shape[0]} filters for {cin} input channels")
    cout = pk.shape[0]
    if pk.shape != (cout, cin, 1, 1):
        raise ShapeError(f"pointwise kernel must be [Cout,{cin},1,1], got {pk.shape}")
    if bd.shape != (cout,):
        raise ShapeError(f"bias shape {bd.shape} != ({cout},)")
    kh, kw = dk.shape[2], dk.shape[3]
    if padding is None:
        padding = kh // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    # depthwise: one spatial filter per channel
    sb, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, cin, kh, kw, oh, ow),
        strides=(sb, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    mid = np.einsum("bcklhw,ckl->bchw", patches.reshape(b, cin, kh, kw, oh, ow), dk[:, 0], optimize=True)
    # pointwise: 1x1 mix
    pmat = pk.reshape(cout, cin)
    out = np.einsum("oc,bchw->bohw", pmat, mid) + bd[None, :, None, None]

    def bwd(g: np.ndarray):
        gb = g.sum(axis=(0, 2, 3))
        gpk = np.einsum("bohw,bchw->oc", g, mid).reshape(pk.shape)
        gmid = np.einsum("oc,bohw->bchw", pmat, g)
        gdk = np.einsum("bchw,bcklhw->ckl", gmid, patches.reshape(b, cin, kh, kw, oh, ow)).reshape(dk.shape)
        # scatter gmid through the depthwise windows
        gp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                    gmid * dk[None, :, 0, i, j, None, None]
                )
        gx = gp[:, :, padding : padding + h, padding : padding + w] if padding else gp
        return gx, gdk, gpk, gb

    return register(graph, out, (x, depthwise_kernel, pointwise_kernel, bias), bwd)


# ---------------------------------------------------------------------------
# layer ops


def maxpool2(graph: Graph | None, x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 (ties break toward the first element)."""
    xd = _data(x)
    b, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    blocks = xd.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    am = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, am[..., None], axis=-1)[..., 0]

    def bwd(g: np.ndarray):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, am[..., None], g[..., None], axis=-1)
        gx = gb.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gx,)

    return register(graph, out, (x,), bwd)


def upsample2_nearest(graph: Graph | None, x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling."""
    xd = _data(x)
    if xd.ndim != 4:
        raise ShapeError(f"upsample2_nearest: expected 4-D input, got {xd.shape}")
    out = np.repeat(np.repeat(xd, 2, axis=2), 2, axis=3)
    b, c, h, w = xd.shape

    def bwd(g: np.ndarray):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return register(graph, out, (x,), bwd)


def concat_channels(graph: Graph | None, xs: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    datas = [_data(x) for x in xs]
    base = datas[0].shape
    for d in datas[1:]:
        if d.shape[0] != base[0] or d.shape[2:] != base[2:]:
            raise ShapeError(f"concat_channels: incompatible shapes {[d.shape for d in datas]}")
    out = np.concatenate(datas, axis=1)
    splits = np.cumsum([d.shape[1] for d in datas])[:-1]

    def bwd(g: np.ndarray):
        return tuple(np.split(g, splits, axis=1))

    return register(graph, out, tuple(xs), bwd)


def dense(graph: Graph | None, x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Fully connected layer: x[B,F] @ weight[F,O] + bias[O]."""
    xd, wd, bd = _data(x), _data(weight), _data(bias)
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[0]:
        raise ShapeError(f"dense: incompatible shapes x{xd.shape} w{wd.shape}")
    if bd.shape != (wd.shape[1],):
        raise ShapeError(f"dense: bias shape {bd.shape} != ({wd.shape[1]},)")
    out = xd @ wd + bd

    def bwd(g: np.ndarray):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return register(graph, out, (x, weight, bias), bwd)


def global_avg_pool(graph: Graph | None, x: Tensor) -> Tensor:
    """Mean over spatial dims: [B,C,H,W] -> [B,C]."""
    xd = _data(x)
    if xd.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected 4-D input, got {xd.shape}")
    b, c, h, w = xd.shape
    out = xd.mean(axis=(2, 3))

    def bwd(g: np.ndarray):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), xd.shape).copy(),)

    return register(graph, out, (x,), bwd)


def relu(graph: Graph | None, x: Tensor) -> Tensor:
    xd = _data(x)
    out = np.maximum(xd, 0.0)

    def bwd(g: np.ndarray):
        return (g * (xd > 0.0),)

    return register(graph, out, (x,), bwd)


def sigmoid_array(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on a plain array."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(graph: Graph | None, x: Tensor) -> Tensor:
    y = sigmoid_array(_data(x))

    def bwd(g: np.ndarray):
        return (g * y * (1.0 - y),)

    return register(graph, y, (x,), bwd)


def tanh(graph: Graph | None, x: Tensor) -> Tensor:
    y = np.tanh(_data(x))

    def bwd(g: np.ndarray):
        return (g * (1.0 - y * y),)

    return register(graph, y, (x,), bwd)


def softmax(graph: Graph | None, x: Tensor) -> Tensor:
    """Softmax over the last axis (numerically shifted)."""
    xd = _data(x)
    z = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return register(graph, y, (x,), bwd)


def dropout(
    graph: Graph | None,
    x: Tensor,
    rate: float,
    train: bool,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Inverted dropout; identity when ``train`` is False or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0,1), got {rate}")
    xd = _data(x)
    if not train or rate == 0.0:
        out = xd.copy()

        def bwd_id(g: np.ndarray):
            return (g,)

        return register(graph, out, (x,), bwd_id)
    if rng is None:
        raise ValueError("dropout: an rng is required when training with rate > 0")
    keep = (rng.random(xd.shape) >= rate) / (1.0 - rate)
    out = xd * keep

    def bwd(g: np.ndarray):
        return (g * keep,)

    return register(graph, out, (x,), bwd)


def residual_add(graph: Graph | None, a: Tensor, b: Tensor) -> Tensor:
    ad, bd = _data(a), _data(b)
    if ad.shape != bd.shape:
        raise ShapeError(f"residual_add: shapes differ {ad.shape} vs {bd.shape}")
    out = ad + bd

    def bwd(g: np.ndarray):
        return g, g

    return register(graph, out, (a, b), bwd)


_LAYER_DISPATCH = {
    "maxpool2": maxpool2,
    "upsample2_nearest": upsample2_nearest,
    "dense": dense,
    "global_avg_pool": global_avg_pool,
    "relu": relu,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "tanh": tanh,
    "residual_add": residual_add,
}


def eval_layer(graph: Graph | None, kind: str, *inputs, **kwargs) -> Tensor:
    """Uniform entry point over the supported layer kinds.

    ``concat_channels`` takes the inputs as a sequence; ``dropout`` takes
    rate/train/rng keyword arguments.
    """
    if kind == "concat_channels":
        return concat_channels(graph, inputs)
    if kind == "dropout":
        return dropout(graph, inputs[0], **kwargs)
    fn = _LAYER_DISPATCH.get(kind)
    if fn is None:
        raise ValueError(f"eval_layer: unknown kind {kind!r}")
    return fn(graph, *inputs, **kwargs)


# ---------------------------------------------------------------------------
# parameter checkpoints

_CKPT_MAGIC = b"MTCK"
_CKPT_VERSION = 1


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    """Write named tensors to a little-endian binary checkpoint.

    Layout: magic ``MTCK``, u32 version, u32 tensor count, then per tensor
    u32 name length, utf-8 name, u32 rank, u32 dims, raw float64 payload.
    """
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(params)))
        for name, t in params.items():
            d = _data(t)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", d.ndim))
            fh.write(struct.pack(f"<{d.ndim}I", *d.shape))
            fh.write(np.ascontiguousarray(d, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (magic {magic!r})")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(dims)
            out[name] = payload.astype(np.float64)
        return out
