"""Masked-reconstruction novelty model.

Two small autoencoders with hand-written gradients are provided:

``patch_linear``
    affine encoder/decoder shared across a non-overlapping k x k patch grid.
``small_conv``
    three stride-2 convolutions, a dense n-dimensional bottleneck and a
    mirrored transposed-convolution decoder.

Images are ``(H, W, C)`` float arrays in [0, 1]; masks are ``(H, W)`` bool.
"""

from __future__ import annotations

import copy
import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AllMasksEmpty, ConfigError, DataError, DimensionMismatch, EmptyDataset

log = logging.getLogger(__name__)

ARCHITECTURES = ("patch_linear", "small_conv")
OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class ModelConfig:
    bottleneck: int = 256
    architecture: str = "patch_linear"
    patch_size: int = 16
    conv_channels: tuple = (8, 16, 8)
    init: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.bottleneck < 1 or self.patch_size < 1:
            raise ConfigError("bottleneck and patch_size must be >= 1")
        if len(self.conv_channels) != 3 or min(self.conv_channels) < 1:
            raise ConfigError("conv_channels must be three positive integers")
        if self.init not in ("uniform", "zeros"):
            raise ConfigError(f"unknown init {self.init!r}")
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 100
    input_size: tuple = (224, 224)  # (width, height)
    split: float = 0.8
    seed: int = 0
    optimizer: str = "adam"
    loss_normalization: str = "image"  # "image": 1/(w h); "mask": 1/sum(m)

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.batch_size > 0 and self.epochs > 0):
            raise ConfigError("learning_rate, batch_size and epochs must be positive")
        if not 0 < self.split < 1:
            raise ConfigError("split must lie strictly between 0 and 1")
        if len(self.input_size) != 2 or min(self.input_size) < 1:
            raise ConfigError("input_size must be two positive integers")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.loss_normalization not in ("image", "mask"):
            raise ConfigError(f"unknown loss_normalization {self.loss_normalization!r}")
        object.__setattr__(self, "input_size", tuple(int(s) for s in self.input_size))


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def _check_pair(x, x_hat, m):
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.ndim == 2:
        x = x[..., None]
    if x_hat.ndim == 2:
        x_hat = x_hat[..., None]
    m = np.asarray(m)
    if x.shape != x_hat.shape or m.shape != x.shape[:2]:
        raise DimensionMismatch(f"x {x.shape}, x_hat {x_hat.shape}, mask {m.shape}")
    return x, x_hat, m.astype(float)


def _normalizer(m: np.ndarray, normalization: str) -> float:
    if normalization == "mask":
        return max(float(m.sum()), 1.0)
    return float(m.shape[0] * m.shape[1])


def masked_loss(x, x_hat, m, normalization: str = "image") -> float:
    """Masked MSE: ``sum_ij m_ij * mean_c (x_hat - x)^2 / (w h)``."""
    x, x_hat, m = _check_pair(x, x_hat, m)
    sq = np.mean((x_hat - x) ** 2, axis=-1)
    return float(np.sum(m * sq) / _normalizer(m, normalization))


def masked_loss_gradient(x, x_hat, m, normalization: str = "image") -> np.ndarray:
    """d(masked_loss)/d(x_hat), same shape as ``x_hat`` (channels kept)."""
    x_arr = np.asarray(x_hat)
    x, x_hat, m = _check_pair(x, x_hat, m)
    c = x.shape[-1]
    g = 2.0 * m[..., None] * (x_hat - x) / (c * _normalizer(m, normalization))
    return g.reshape(x_arr.shape)


# --------------------------------------------------------------------------
# resizing
# --------------------------------------------------------------------------

def _bilinear_axis(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize(x, width: int, height: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres."""
    x = np.asarray(x, dtype=float)
    if width < 1 or height < 1:
        raise ValueError("resize target must be positive")
    h, w = x.shape[:2]
    if (w, h) == (width, height):
        return x.copy()
    r0, r1, fr = _bilinear_axis(h, height)
    c0, c1, fc = _bilinear_axis(w, width)
    extra = (None,) * (x.ndim - 2)
    fr = fr[(slice(None), None) + extra]
    fc = fc[(None, slice(None)) + extra]
    top = x[r0][:, c0] + fc * (x[r0][:, c1] - x[r0][:, c0])
    bot = x[r1][:, c0] + fc * (x[r1][:, c1] - x[r1][:, c0])
    return top + fr * (bot - top)


def resize_mask(m, width: int, height: int) -> np.ndarray:
    """Nearest-neighbour resize; keeps labels/binary values intact."""
    m = np.asarray(m)
    h, w = m.shape[:2]
    rows = np.minimum(((np.arange(height) + 0.5) * h / height).astype(int), h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * w / width).astype(int), w - 1)
    return m[rows][:, cols]


# --------------------------------------------------------------------------
# architectures
# --------------------------------------------------------------------------

def _init(rng, shape, fan_in, zeros):
    if zeros:
        return np.zeros(shape)
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class PatchLinear:
    def __init__(self, mc: ModelConfig, input_size, channels: int):
        self.k = mc.patch_size
        self.width, self.height = input_size
        self.channels = channels
        if self.width % self.k or self.height % self.k:
            raise ConfigError(f"input size {input_size} not divisible by patch size {self.k}")
        self.dim = self.k * self.k * channels
        self.n = mc.bottleneck

    def init_params(self, rng, zeros=False) -> dict:
        d, n = self.dim, self.n
        return {
            "enc_w": _init(rng, (n, d), d, zeros),
            "enc_b": _init(rng, (n,), d, zeros),
            "dec_w": _init(rng, (d, n), n, zeros),
            "dec_b": _init(rng, (d,), n, zeros),
        }

    def _patches(self, x):
        b = x.shape[0]
        k = self.k
        gh, gw = self.height // k, self.width // k
        p = x.reshape(b, gh, k, gw, k, self.channels).transpose(0, 1, 3, 2, 4, 5)
        return p.reshape(b, gh * gw, self.dim)

    def _unpatch(self, p):
        b = p.shape[0]
        k = self.k
        gh, gw = self.height // k, self.width // k
        x = p.reshape(b, gh, gw, k, k, self.channels).transpose(0, 1, 3, 2, 4, 5)
        return x.reshape(b, self.height, self.width, self.channels)

    def forward(self, params, x, mask=None):
        """Reconstruct a batch ``(B, H, W, C)``.

        With *mask* given, patches without a masked pixel are skipped; their
        output is left at zero and receives no gradient.
        """
        xp = self._patches(x)
        if mask is None:
            sel = np.ones(xp.shape[:2], dtype=bool)
        else:
            sel = self._patches(np.asarray(mask, dtype=float)[..., None]
                                .repeat(self.channels, axis=-1)).any(axis=-1)
        rows = xp[sel]
        z = rows @ params["enc_w"].T + params["enc_b"]
        y = z @ params["dec_w"].T + params["dec_b"]
        out = np.zeros_like(xp)
        out[sel] = y
        return self._unpatch(out), (rows, z, sel)

    def backward(self, params, cache, grad_out) -> dict:
        rows, z, sel = cache
        gy = self._patches(grad_out)[sel]
        gz = gy @ params["dec_w"]
        return {
            "enc_w": gz.T @ rows,
            "enc_b": gz.sum(axis=0),
            "dec_w": gy.T @ z,
            "dec_b": gy.sum(axis=0),
        }


_K, _S = 4, 2  # every conv layer: kernel 4, stride 2, padding 1


def _im2col(x):
    """``(B, H, W, C)`` -> ``(B, H/2, W/2, C, 4, 4)`` patches of the padded input."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (_K, _K), axis=(1, 2))
    return win[:, ::_S, ::_S]


def _col2im(cols, h, w):
    """Adjoint of :func:`_im2col`; returns ``(B, h, w, C)``."""
    b, ho, wo, c = cols.shape[:4]
    out = np.zeros((b, h + 2, w + 2, c))
    for i in range(_K):
        for j in range(_K):
            out[:, i:i + _S * ho:_S, j:j + _S * wo:_S, :] += cols[..., i, j]
    return out[:, 1:-1, 1:-1, :]


def conv_forward(x, w, b):
    cols = _im2col(x)
    bsz, ho, wo = cols.shape[:3]
    flat = cols.reshape(bsz * ho * wo, -1)
    out = flat @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(bsz, ho, wo, -1), flat


def conv_backward(x_shape, flat, w, grad):
    bsz, h, wd, c = x_shape
    g = grad.reshape(-1, w.shape[0])
    dw = (g.T @ flat).reshape(w.shape)
    db = g.sum(axis=0)
    dcols = (g @ w.reshape(w.shape[0], -1)).reshape(bsz, h // 2, wd // 2, c, _K, _K)
    return _col2im(dcols, h, wd), dw, db


def deconv_forward(y, w, b):
    """Transposed convolution; *w* has shape ``(C_in, C_out, 4, 4)``."""
    bsz, h, wd, _ = y.shape
    cols = (y.reshape(-1, w.shape[0]) @ w.reshape(w.shape[0], -1))
    cols = cols.reshape(bsz, h, wd, w.shape[1], _K, _K)
    return _col2im(cols, 2 * h, 2 * wd) + b


def deconv_backward(y, w, grad):
    bsz, h, wd, cin = y.shape
    gcols = _im2col(grad).reshape(bsz * h * wd, -1)
    dw = (y.reshape(-1, cin).T @ gcols).reshape(w.shape)
    dy = (gcols @ w.reshape(cin, -1).T).reshape(y.shape)
    db = grad.sum(axis=(0, 1, 2))
    return dy, dw, db


class SmallConv:
    def __init__(self, mc: ModelConfig, input_size, channels: int):
        self.width, self.height = input_size
        if self.width % 8 or self.height % 8:
            raise ConfigError(f"input size {input_size} must be divisible by 8 for small_conv")
        self.channels = channels
        self.c1, self.c2, self.c3 = mc.conv_channels
        self.n = mc.bottleneck
        self.flat = (self.height // 8) * (self.width // 8) * self.c3

    def init_params(self, rng, zeros=False) -> dict:
        c, c1, c2, c3 = self.channels, self.c1, self.c2, self.c3
        kk = _K * _K
        return {
            "conv1_w": _init(rng, (c1, c, _K, _K), c * kk, zeros),
            "conv1_b": _init(rng, (c1,), c * kk, zeros),
            "conv2_w": _init(rng, (c2, c1, _K, _K), c1 * kk, zeros),
            "conv2_b": _init(rng, (c2,), c1 * kk, zeros),
            "conv3_w": _init(rng, (c3, c2, _K, _K), c2 * kk, zeros),
            "conv3_b": _init(rng, (c3,), c2 * kk, zeros),
            "enc_w": _init(rng, (self.n, self.flat), self.flat, zeros),
            "enc_b": _init(rng, (self.n,), self.flat, zeros),
            "dec_w": _init(rng, (self.flat, self.n), self.n, zeros),
            "dec_b": _init(rng, (self.flat,), self.n, zeros),
            "deconv3_w": _init(rng, (c3, c2, _K, _K), c3 * kk, zeros),
            "deconv3_b": _init(rng, (c2,), c3 * kk, zeros),
            "deconv2_w": _init(rng, (c2, c1, _K, _K), c2 * kk, zeros),
            "deconv2_b": _init(rng, (c1,), c2 * kk, zeros),
            "deconv1_w": _init(rng, (c1, c, _K, _K), c1 * kk, zeros),
            "deconv1_b": _init(rng, (c,), c1 * kk, zeros),
        }

    def forward(self, params, x, mask=None):
        p = params
        h1, f1 = conv_forward(x, p["conv1_w"], p["conv1_b"])
        a1 = np.maximum(h1, 0.0)
        h2, f2 = conv_forward(a1, p["conv2_w"], p["conv2_b"])
        a2 = np.maximum(h2, 0.0)
        h3, f3 = conv_forward(a2, p["conv3_w"], p["conv3_b"])
        a3 = np.maximum(h3, 0.0)
        bsz = x.shape[0]
        flat = a3.reshape(bsz, -1)
        z = flat @ p["enc_w"].T + p["enc_b"]
        g_pre = z @ p["dec_w"].T + p["dec_b"]
        g = np.maximum(g_pre, 0.0).reshape(a3.shape)
        e3 = deconv_forward(g, p["deconv3_w"], p["deconv3_b"])
        d3 = np.maximum(e3, 0.0)
        e2 = deconv_forward(d3, p["deconv2_w"], p["deconv2_b"])
        d2 = np.maximum(e2, 0.0)
        out = deconv_forward(d2, p["deconv1_w"], p["deconv1_b"])
        cache = (x, h1, f1, a1, h2, f2, a2, h3, f3, flat, z, g_pre, g, e3, d3, e2, d2)
        return out, cache

    def backward(self, params, cache, grad_out) -> dict:
        p = params
        x, h1, f1, a1, h2, f2, a2, h3, f3, flat, z, g_pre, g, e3, d3, e2, d2 = cache
        grads = {}
        gd2, grads["deconv1_w"], grads["deconv1_b"] = deconv_backward(d2, p["deconv1_w"], grad_out)
        ge2 = gd2 * (e2 > 0)
        gd3, grads["deconv2_w"], grads["deconv2_b"] = deconv_backward(d3, p["deconv2_w"], ge2)
        ge3 = gd3 * (e3 > 0)
        gg, grads["deconv3_w"], grads["deconv3_b"] = deconv_backward(g, p["deconv3_w"], ge3)
        gg_pre = gg.reshape(g_pre.shape) * (g_pre > 0)
        grads["dec_w"] = gg_pre.T @ z
        grads["dec_b"] = gg_pre.sum(axis=0)
        gz = gg_pre @ p["dec_w"]
        grads["enc_w"] = gz.T @ flat
        grads["enc_b"] = gz.sum(axis=0)
        ga3 = (gz @ p["enc_w"]).reshape(h3.shape) * (h3 > 0)
        ga2, grads["conv3_w"], grads["conv3_b"] = conv_backward(a2.shape, f3, p["conv3_w"], ga3)
        ga2 = ga2 * (h2 > 0)
        ga1, grads["conv2_w"], grads["conv2_b"] = conv_backward(a1.shape, f2, p["conv2_w"], ga2)
        ga1 = ga1 * (h1 > 0)
        _, grads["conv1_w"], grads["conv1_b"] = conv_backward(x.shape, f1, p["conv1_w"], ga1)
        return grads


def build_network(mc: ModelConfig, input_size, channels: int):
    cls = PatchLinear if mc.architecture == "patch_linear" else SmallConv
    return cls(mc, input_size, channels)


# --------------------------------------------------------------------------
# model container
# --------------------------------------------------------------------------

@dataclass
class ReconstructionModel:
    model_config: ModelConfig
    train_config: TrainConfig
    channels: int
    params: dict
    best_val_loss: float = float("nan")
    best_epoch: int = -1
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    train_frames: int = 0

    @property
    def network(self):
        return build_network(self.model_config, self.train_config.input_size, self.channels)

    def reconstruct(self, x) -> np.ndarray:
        """Reconstruction clamped to [0, 1]; input must already be at ``input_size``."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[..., None]
        w, h = self.train_config.input_size
        if x.shape != (h, w, self.channels):
            raise DimensionMismatch(f"expected {(h, w, self.channels)}, got {x.shape}")
        out, _ = self.network.forward(self.params, x[None])
        out = np.clip(out[0], 0.0, 1.0)
        return out[..., 0] if squeeze else out


def reconstruct(model: ReconstructionModel, x) -> np.ndarray:
    return model.reconstruct(x)


def batch_loss_and_grad(net, params, xs, ms, normalization="image", with_grad=True):
    """Mean masked loss of a batch and its parameter gradient."""
    out, cache = net.forward(params, xs, ms)
    losses = [masked_loss(x, o, m, normalization) for x, o, m in zip(xs, out, ms)]
    loss = float(np.mean(losses))
    if not with_grad:
        return loss, None
    g_out = np.stack([masked_loss_gradient(x, o, m, normalization)
                      for x, o, m in zip(xs, out, ms)]) / len(xs)
    return loss, net.backward(params, cache, g_out)


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            m_hat = m / (1 - self.b1 ** self.t)
            v_hat = v / (1 - self.b2 ** self.t)
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.lr * g


def _prepare(dataset, tc: TrainConfig):
    w, h = tc.input_size
    xs, ms = [], []
    for img, m in dataset:
        img = np.asarray(img, dtype=float)
        if img.ndim == 2:
            img = img[..., None]
        m = np.asarray(m, dtype=bool)
        if m.shape != img.shape[:2]:
            raise DimensionMismatch(f"image {img.shape} vs mask {m.shape}")
        xs.append(resize(img, w, h))
        ms.append(resize_mask(m, w, h))
    channels = {x.shape[-1] for x in xs}
    if len(channels) != 1:
        raise DataError("all training images must have the same channel count")
    return np.stack(xs), np.stack(ms)


def train(dataset: Sequence, mc: ModelConfig, tc: TrainConfig,
          on_epoch: Optional[Callable] = None) -> ReconstructionModel:
    """Fit the network by mini-batch descent on the masked loss.

    Returns the parameter snapshot with the lowest validation loss.  The
    same configs and data always produce the same parameters.
    """
    from .dataset import split_indices

    if len(dataset) == 0:
        raise EmptyDataset("no training samples")
    xs, ms = _prepare(dataset, tc)
    if not ms.any():
        raise AllMasksEmpty("every training mask is empty")
    n = len(xs)
    if n >= 2:
        tr_idx, va_idx = split_indices(n, tc.split, tc.seed)
    else:
        tr_idx, va_idx = [0], [0]
    tr_idx = np.asarray(tr_idx)
    va_idx = np.asarray(va_idx)

    channels = xs.shape[-1]
    net = build_network(mc, tc.input_size, channels)
    params = net.init_params(np.random.default_rng(mc.seed), zeros=mc.init == "zeros")
    opt = Adam(tc.learning_rate) if tc.optimizer == "adam" else SGD(tc.learning_rate)
    order_rng = np.random.default_rng(tc.seed + 1)

    def evaluate(idx):
        losses = []
        for i in range(0, len(idx), tc.batch_size):
            sel = idx[i:i + tc.batch_size]
            loss, _ = batch_loss_and_grad(net, params, xs[sel], ms[sel],
                                          tc.loss_normalization, with_grad=False)
            losses.append(loss * len(sel))
        return float(np.sum(losses) / len(idx))

    best = (np.inf, -1, None)
    history = []
    for epoch in range(1, tc.epochs + 1):
        perm = tr_idx[order_rng.permutation(len(tr_idx))]
        tr_losses = []
        for i in range(0, len(perm), tc.batch_size):
            sel = np.sort(perm[i:i + tc.batch_size])
            loss, grads = batch_loss_and_grad(net, params, xs[sel], ms[sel], tc.loss_normalization)
            opt.step(params, grads)
            tr_losses.append(loss * len(sel))
        train_loss = float(np.sum(tr_losses) / len(perm))
        val_loss = evaluate(va_idx)
        history.append((epoch, train_loss, val_loss))
        if val_loss < best[0]:
            best = (val_loss, epoch, copy.deepcopy(params))
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)
        log.debug("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)

    return ReconstructionModel(mc, tc, channels, best[2], best[0], best[1], history, len(tr_idx))


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------
#
# layout (all integers little-endian):
#   8 bytes   magic b"TRLMKCK1"
#   u32       format version (1)
#   u32       config length L, then L bytes of UTF-8 JSON (configs, metadata)
#   u32       number of arrays
#   per array: u16 name length, name (UTF-8), u8 ndim, ndim x u64 shape,
#              prod(shape) x float64 ('<f8') values in C order

MAGIC = b"TRLMKCK1"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: ReconstructionModel, path) -> None:
    meta = {
        "model_config": asdict(model.model_config),
        "train_config": asdict(model.train_config),
        "channels": model.channels,
        "best_val_loss": model.best_val_loss,
        "best_epoch": model.best_epoch,
        "history": [list(h) for h in model.history],
        "train_frames": model.train_frames,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(model.params)))
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> ReconstructionModel:
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise DataError(f"{path}: truncated checkpoint")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(8)) != MAGIC:
        raise DataError(f"{path}: not a trailmark checkpoint")
    version, n_meta = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(bytes(take(n_meta)).decode("utf-8"))
    (n_arrays,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(n_arrays):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(take(8 * count), dtype="<f8").astype(float).reshape(shape)
    if pos != len(data):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    mc_d = meta["model_config"]
    mc_d["conv_channels"] = tuple(mc_d["conv_channels"])
    tc_d = meta["train_config"]
    tc_d["input_size"] = tuple(tc_d["input_size"])
    return ReconstructionModel(
        ModelConfig(**mc_d), TrainConfig(**tc_d), meta["channels"], params,
        meta["best_val_loss"], meta["best_epoch"], [tuple(h) for h in meta["history"]],
        meta.get("train_frames", 0),
    )
