"""Small convolutional embedding network written directly in numpy.

Architecture: [conv3x3 (pad 1) -> ReLU -> maxpool 2x2] * n -> flatten ->
[FC -> ReLU] * len(fc_sizes) -> FC head (softmax width = number of
pseudo-label classes).  The embedding is the post-ReLU activation of the
last hidden FC layer.

Training minimizes softmax cross-entropy against cluster pseudo-labels
plus ``0.5 * weight_decay * sum(W**2)`` over weight tensors (biases are
not decayed), using plain mini-batch SGD.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from scenecluster.errors import ClusteringError, DivergenceError, ParamFileError
from scenecluster.features import LmsFeature

PARAM_MAGIC = b"SCNNET\r\n"
PARAM_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    input_shape: tuple[int, int, int] = (1, 64, 128)  # (channels, mel bands, frames per channel)
    conv_layers: tuple[tuple[int, int], ...] = ((5, 1), (5, 1))  # (out_channels, stride), 3x3 kernels
    fc_sizes: tuple[int, ...] = (160,)  # last entry is the embedding width
    n_output_classes: int = 2
    learning_rate: float = 0.001
    weight_decay: float = 0.1
    batch_size: int = 60
    max_iterations: int = 3000  # SGD steps per train_epochs call
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "conv_layers", tuple((int(c), int(s)) for c, s in self.conv_layers))
        object.__setattr__(self, "fc_sizes", tuple(int(v) for v in self.fc_sizes))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ClusteringError(f"bad input_shape {self.input_shape}")
        if not self.fc_sizes or min(self.fc_sizes) < 1:
            raise ClusteringError("fc_sizes must be non-empty and positive (last = embedding dim)")
        if any(c < 1 or s < 1 for c, s in self.conv_layers):
            raise ClusteringError("conv channels and strides must be positive")
        if self.n_output_classes < 1:
            raise ClusteringError("n_output_classes must be positive")
        if not self.learning_rate >= 0:
            raise ClusteringError("learning_rate must be >= 0")
        if not self.weight_decay >= 0:
            raise ClusteringError("weight_decay must be >= 0")
        if self.batch_size < 1 or self.max_iterations < 1:
            raise ClusteringError("batch_size and max_iterations must be positive")

    @property
    def embedding_dim(self) -> int:
        return self.fc_sizes[-1]

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter tensor shapes in storage order.

        Raises if the spatial size collapses to zero somewhere.
        """
        c, h, w = self.input_shape
        shapes = {}
        for i, (out_c, stride) in enumerate(self.conv_layers):
            shapes[f"conv{i}.W"] = (out_c, c, 3, 3)
            shapes[f"conv{i}.b"] = (out_c,)
            h = ((h - 1) // stride + 1) // 2
            w = ((w - 1) // stride + 1) // 2
            c = out_c
            if h < 1 or w < 1:
                raise ClusteringError(
                    f"input {self.input_shape} too small for {len(self.conv_layers)} conv+pool layers"
                )
        fan_in = c * h * w
        for i, width in enumerate(self.fc_sizes):
            shapes[f"fc{i}.W"] = (width, fan_in)
            shapes[f"fc{i}.b"] = (width,)
            fan_in = width
        shapes["head.W"] = (self.n_output_classes, fan_in)
        shapes["head.b"] = (self.n_output_classes,)
        return shapes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["conv_layers"] = [list(x) for x in self.conv_layers]
        d["fc_sizes"] = list(self.fc_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


@dataclass
class NetworkParams:
    config: NetworkConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    @property
    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())


def _init_tensor(rng, shape):
    if len(shape) == 1:
        return np.zeros(shape)
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_network(cfg: NetworkConfig) -> NetworkParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng([cfg.seed, 0])
    arrays = {name: _init_tensor(rng, shape) for name, shape in cfg.layer_shapes().items()}
    return NetworkParams(cfg, arrays)


def with_head(params: NetworkParams, n_classes: int, seed: int | None = None) -> NetworkParams:
    """Copy of ``params`` whose softmax head is freshly initialized with width ``n_classes``."""
    cfg = replace(params.config, n_output_classes=int(n_classes))
    rng = np.random.default_rng([params.config.seed if seed is None else seed, 1, n_classes])
    arrays = {k: v.copy() for k, v in params.arrays.items()}
    shapes = cfg.layer_shapes()
    arrays["head.W"] = _init_tensor(rng, shapes["head.W"])
    arrays["head.b"] = np.zeros(shapes["head.b"])
    return NetworkParams(cfg, arrays)


# --- input preparation ------------------------------------------------------


def dataset_stats(features: Sequence[LmsFeature]) -> tuple[float, float]:
    """Global mean and standard deviation over every LMS entry in the dataset."""
    total = sum(f.values.size for f in features)
    mean = sum(float(f.values.sum()) for f in features) / total
    var = sum(float(((f.values - mean) ** 2).sum()) for f in features) / total
    return mean, float(np.sqrt(var)) if var > 0 else 1.0


def prepare_inputs(features: Sequence[LmsFeature], input_shape, stats=None) -> np.ndarray:
    """Standardize, crop or zero-pad along time, and stack channels.

    With ``C`` channels the first ``C * frames`` standardized frames are cut
    into ``C`` consecutive segments.  Padding happens after standardization,
    so padded cells sit at the dataset mean.
    """
    if len(features) == 0:
        raise ClusteringError("empty dataset")
    channels, n_mel, frames = input_shape
    total = channels * frames
    mean, std = stats if stats is not None else dataset_stats(features)
    out = np.zeros((len(features), channels, n_mel, frames))
    for m, f in enumerate(features):
        v = np.asarray(f.values, dtype=np.float64)
        if v.shape[0] != n_mel:
            raise ClusteringError(f"item {m}: {v.shape[0]} mel bands, network expects {n_mel}")
        v = (v[:, :total] - mean) / std
        padded = np.zeros((n_mel, total))
        padded[:, : v.shape[1]] = v
        out[m] = padded.reshape(n_mel, channels, frames).transpose(1, 0, 2)
    return out


# --- layers -----------------------------------------------------------------


def _offset_view(xp, i, j, stride, hout, wout):
    return xp[:, :, i:i + stride * (hout - 1) + 1:stride, j:j + stride * (wout - 1) + 1:stride]


def _conv_forward(x, W, b, stride):
    # sum over the 9 kernel offsets; avoids materializing an im2col tensor
    B, C, H, Wd = x.shape
    hout, wout = (H - 1) // stride + 1, (Wd - 1) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((W.shape[0], B, hout, wout))
    for i in range(3):
        for j in range(3):
            out += np.tensordot(W[:, :, i, j], _offset_view(xp, i, j, stride, hout, wout), axes=([1], [1]))
    return out.transpose(1, 0, 2, 3) + b[None, :, None, None], xp


def _conv_backward(dout, xp, W, x_shape, stride):
    hout, wout = dout.shape[2], dout.shape[3]
    dW = np.zeros_like(W)
    dxp = np.zeros((xp.shape[1], xp.shape[0], xp.shape[2], xp.shape[3]))  # C, B, H, W
    for i in range(3):
        for j in range(3):
            view = _offset_view(xp, i, j, stride, hout, wout)
            dW[:, :, i, j] = np.tensordot(dout, view, axes=([0, 2, 3], [0, 2, 3]))
            _offset_view(dxp, i, j, stride, hout, wout)[...] += np.tensordot(W[:, :, i, j], dout, axes=([0], [1]))
    db = dout.sum(axis=(0, 2, 3))
    return dxp[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3), dW, db


def _pool_forward(x):
    B, C, H, W = x.shape
    h2, w2 = H // 2, W // 2
    blocks = x[:, :, : 2 * h2, : 2 * w2].reshape(B, C, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(B, C, h2, w2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape):
    B, C, H, W = x_shape
    h2, w2 = dout.shape[2], dout.shape[3]
    dblocks = np.zeros((B, C, h2, w2, 4))
    np.put_along_axis(dblocks, idx[..., None], dout[..., None], axis=-1)
    dblocks = dblocks.reshape(B, C, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * h2, 2 * w2)
    dx = np.zeros(x_shape)
    dx[:, :, : 2 * h2, : 2 * w2] = dblocks
    return dx


def _dense(h, W):
    # einsum rather than BLAS matmul: each output row is then bit-identical
    # whatever the batch composition
    return np.einsum("bk,ok->bo", h, W)


def _forward(params: NetworkParams, x: np.ndarray, keep_cache: bool = False):
    cfg = params.config
    a = params.arrays
    if x.ndim != 4 or tuple(x.shape[1:]) != cfg.input_shape:
        raise ClusteringError(f"input batch shape {x.shape[1:]} != network input_shape {cfg.input_shape}")
    cache = []
    h = x
    for i, (_, stride) in enumerate(cfg.conv_layers):
        z, xp = _conv_forward(h, a[f"conv{i}.W"], a[f"conv{i}.b"], stride)
        r = np.maximum(z, 0.0)
        p, idx = _pool_forward(r)
        if keep_cache:
            cache.append(("conv", i, h.shape, xp, z, r.shape, idx, stride))
        h = p
    flat_shape = h.shape
    h = h.reshape(h.shape[0], -1)
    if keep_cache:
        cache.append(("flatten", flat_shape))
    for i in range(len(cfg.fc_sizes)):
        z = _dense(h, a[f"fc{i}.W"]) + a[f"fc{i}.b"]
        if keep_cache:
            cache.append(("fc", i, h, z))
        h = np.maximum(z, 0.0)
    embeddings = h
    logits = _dense(h, a["head.W"]) + a["head.b"]
    return embeddings, logits, cache


def forward(params: NetworkParams, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (embeddings, logits) for a prepared batch of shape (B, *input_shape)."""
    emb, logits, _ = _forward(params, np.asarray(batch, dtype=np.float64))
    return emb, logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample softmax cross-entropy."""
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    return logsum - z[np.arange(len(labels)), labels]


def _weight_names(params):
    return [k for k in params.arrays if k.endswith(".W")]


def loss_and_grads(params: NetworkParams, x: np.ndarray, labels: np.ndarray):
    """Training loss (mean CE + L2 penalty), mean CE alone, and gradients."""
    cfg = params.config
    a = params.arrays
    emb, logits, cache = _forward(params, x, keep_cache=True)
    n = x.shape[0]
    ce = cross_entropy(logits, labels)
    data_loss = float(ce.mean())
    wd = cfg.weight_decay
    penalty = 0.5 * wd * sum(float((a[k] ** 2).sum()) for k in _weight_names(params))

    grads = {}
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads["head.W"] = dlogits.T @ emb
    grads["head.b"] = dlogits.sum(axis=0)
    dh = dlogits @ a["head.W"]
    for entry in reversed(cache):
        kind = entry[0]
        if kind == "fc":
            _, i, h_in, z = entry
            dz = dh * (z > 0)
            grads[f"fc{i}.W"] = dz.T @ h_in
            grads[f"fc{i}.b"] = dz.sum(axis=0)
            dh = dz @ a[f"fc{i}.W"]
        elif kind == "flatten":
            dh = dh.reshape(entry[1])
        else:
            _, i, in_shape, xp, z, r_shape, idx, stride = entry
            dr = _pool_backward(dh, idx, r_shape)
            dz = dr * (z > 0)
            dh, dW, db = _conv_backward(dz, xp, a[f"conv{i}.W"], in_shape, stride)
            grads[f"conv{i}.W"] = dW
            grads[f"conv{i}.b"] = db
    if wd:
        for k in _weight_names(params):
            grads[k] = grads[k] + wd * a[k]
    return data_loss + penalty, data_loss, grads


def extract_embeddings(params: NetworkParams, inputs: np.ndarray, batch_size: int | None = None) -> np.ndarray:
    """Embedding matrix (N_s x D_e) for prepared inputs."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise ClusteringError("empty dataset")
    bs = batch_size or params.config.batch_size
    rows = [forward(params, inputs[s:s + bs])[0] for s in range(0, inputs.shape[0], bs)]
    return np.concatenate(rows, axis=0)


def train_epochs(
    params: NetworkParams,
    inputs: np.ndarray,
    labels,
    epochs: int = 1,
    epoch_offset: int = 0,
) -> tuple[NetworkParams, float]:
    """Mini-batch SGD on pseudo-labels; returns updated copy and a loss summary.

    The returned loss is the mean per-sample cross-entropy seen during the
    final epoch.  Shuffling for epoch ``e`` is seeded by
    ``(seed, epoch_offset + e)`` so repeated runs are identical.
    """
    cfg = params.config
    labels = np.asarray(labels)
    if labels.shape[0] != inputs.shape[0]:
        raise ClusteringError("labels and inputs differ in length")
    if labels.size and (labels.min() < 0 or labels.max() >= cfg.n_output_classes):
        raise ClusteringError(
            f"label out of range [0, {cfg.n_output_classes}): min={labels.min()}, max={labels.max()}"
        )
    params = params.copy()
    n = inputs.shape[0]
    steps = 0
    epoch_loss = float("nan")
    for e in range(epochs):
        order = np.random.default_rng([cfg.seed, 2, epoch_offset + e]).permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            if steps >= cfg.max_iterations:
                break
            idx = order[s:s + cfg.batch_size]
            _, data_loss, grads = loss_and_grads(params, inputs[idx], labels[idx])
            if not np.isfinite(data_loss):
                raise DivergenceError("divergence: non-finite training loss")
            total += data_loss * len(idx)
            if cfg.learning_rate:
                for k, g in grads.items():
                    params.arrays[k] -= cfg.learning_rate * g
            steps += 1
        else:
            epoch_loss = total / n
            continue
        break
    if not params.all_finite():
        raise DivergenceError("divergence: non-finite parameters after update")
    return params, epoch_loss


def gradient_check(params: NetworkParams, batch: np.ndarray, labels, n_checks: int = 100,
                   h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    Samples ``n_checks`` parameter entries uniformly at random (without
    replacement) over the whole network.
    """
    labels = np.asarray(labels)
    _, _, grads = loss_and_grads(params, batch, labels)
    names = list(params.arrays)
    sizes = np.array([params.arrays[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(n_checks, offsets[-1]), replace=False)
    probe = params.copy()
    worst = 0.0
    for flat in np.sort(picks):
        t = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, pos = names[t], int(flat - offsets[t])
        arr = probe.arrays[name].reshape(-1)
        orig = arr[pos]
        arr[pos] = orig + h
        up = loss_and_grads(probe, batch, labels)[0]
        arr[pos] = orig - h
        down = loss_and_grads(probe, batch, labels)[0]
        arr[pos] = orig
        g_num = (up - down) / (2 * h)
        g_an = grads[name].reshape(-1)[pos]
        err = abs(g_an - g_num) / max(abs(g_an), abs(g_num), 1e-8)
        worst = max(worst, err)
    return worst


# --- persistence --------------------------------------------------------------
#
# Layout (all integers little-endian):
#   [0:8)    magic b"SCNNET\r\n"
#   [8:12)   uint32 format version
#   [12:16)  uint32 header length L
#   [16:16+L) UTF-8 JSON header: {"config": {...}, "tensors": [{"name", "shape"}, ...]}
#   then each tensor in header order as row-major float64 (<f8), no padding.


def save_params(params: NetworkParams, path) -> None:
    header = {
        "config": params.config.to_dict(),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.arrays.items()],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PARAM_MAGIC)
        fh.write(struct.pack("<II", PARAM_VERSION, len(hbytes)))
        fh.write(hbytes)
        for v in params.arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_params(path) -> NetworkParams:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise ParamFileError("truncated parameter file header", offset=len(data))
    if data[:8] != PARAM_MAGIC:
        raise ParamFileError("not a parameter file (bad magic)", offset=0)
    version, hlen = struct.unpack("<II", data[8:16])
    if version != PARAM_VERSION:
        raise ParamFileError(f"parameter file version {version} does not match supported version {PARAM_VERSION}",
                             offset=8)
    if len(data) < 16 + hlen:
        raise ParamFileError("truncated JSON header", offset=len(data))
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
        cfg = NetworkConfig.from_dict(header["config"])
        tensors = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ParamFileError(f"corrupt JSON header: {exc}", offset=16) from exc
    pos = 16 + hlen
    arrays = {}
    for t in tensors:
        shape = tuple(t["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(data):
            raise ParamFileError(f"truncated tensor {t['name']!r}", offset=len(data))
        arrays[t["name"]] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise ParamFileError(f"{len(data) - pos} trailing bytes after last tensor", offset=pos)
    expected = cfg.layer_shapes()
    if {k: v.shape for k, v in arrays.items()} != expected:
        raise ParamFileError("tensor shapes disagree with stored config", offset=16)
    return NetworkParams(cfg, arrays)
