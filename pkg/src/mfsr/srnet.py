"""Two-stream fusion residual network for x8 thermal super-resolution.

Layout: independent visible/thermal feature extraction streams, summation
fusion with a 1x1 recalibration convolution, a residual trunk with periodic
long skips plus one global skip, and cascaded x2 transposed-convolution
reconstruction with a parallel upsampled-thermal path.

The backward pass is hand-written and mirrors the forward graph; training
code accumulates gradients into the parameter containers.
"""

from __future__ import annotations

import configparser
import io
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import imgproc, ops
from .tensor import (InvariantError, LayerParams, assert_finite, load_tensor,
                     resolve_dtype, save_tensor)

CHECKPOINT_MAGIC = b"MFCK"

DECONV_KERNEL = 4  # with stride 2 / padding 1: even overlap, exact x2


@dataclass
class NetworkConfig:
    """Architecture hyperparameters; the layer inventory is a pure function of these."""

    n_blocks: int = 16
    channels: int = 64
    scale: int = 8
    variant: str = "VT"  # VT: visible+thermal, TT: thermal-only ablation
    skip_period: int = 4
    final_conv_after_add: bool = False
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.variant not in ("VT", "TT"):
            raise ValueError(f"variant must be VT or TT, got {self.variant!r}")
        if self.scale not in (2, 4, 8):
            raise ValueError(f"scale must be 2, 4, or 8, got {self.scale}")
        if self.n_blocks < 0 or self.channels < 1 or self.skip_period < 1:
            raise ValueError("n_blocks >= 0, channels >= 1, skip_period >= 1")

    @property
    def n_stages(self) -> int:
        """Number of cascaded x2 deconvolution stages (log2 of the scale)."""
        return self.scale.bit_length() - 1

    def visible_strides(self):
        """Strides of the three visible-stream convolutions (product == scale)."""
        return tuple(2 if i < self.n_stages else 1 for i in range(3))


def layer_inventory(config: NetworkConfig):
    """Ordered (name, kind, spec) layer list; kind is conv | deconv | bn."""
    c = config.channels
    entries = []
    for i, stride in enumerate(config.visible_strides(), 1):
        entries.append((f"visible.conv{i}", "conv",
                        dict(c_in=1 if i == 1 else c, c_out=c, k=3,
                             stride=stride, padding=1)))
    for i in range(1, 4):
        entries.append((f"thermal.conv{i}", "conv",
                        dict(c_in=1 if i == 1 else c, c_out=c, k=3,
                             stride=1, padding=1)))
    entries.append(("fusion.conv", "conv",
                    dict(c_in=c, c_out=c, k=1, stride=1, padding=0)))
    for b in range(1, config.n_blocks + 1):
        # block convs feed batch norm: a bias would be exactly unobservable
        entries.append((f"block{b:02d}.conv1", "conv",
                        dict(c_in=c, c_out=c, k=3, stride=1, padding=1,
                             bias=False)))
        entries.append((f"block{b:02d}.bn1", "bn", dict(c=c)))
        entries.append((f"block{b:02d}.conv2", "conv",
                        dict(c_in=c, c_out=c, k=3, stride=1, padding=1,
                             bias=False)))
        entries.append((f"block{b:02d}.bn2", "bn", dict(c=c)))
    for u in range(1, config.n_stages + 1):
        entries.append((f"upsample.deconv{u}", "deconv",
                        dict(c_in=c, c_out=c, k=DECONV_KERNEL, stride=2,
                             padding=1)))
    entries.append(("upsample.final_conv", "conv",
                    dict(c_in=c, c_out=1, k=3, stride=1, padding=1)))
    for u in range(1, config.n_stages + 1):
        entries.append((f"thermal_up.deconv{u}", "deconv",
                        dict(c_in=1, c_out=1, k=DECONV_KERNEL, stride=2,
                             padding=1)))
    return entries


class NetworkParams:
    """Ordered name -> LayerParams map matching layer_inventory(config)."""

    def __init__(self, config: NetworkConfig, layers: dict):
        self.config = config
        self.layers = layers

    def __getitem__(self, name: str) -> LayerParams:
        return self.layers[name]

    def __iter__(self):
        return iter(self.layers.items())

    def zero_grads(self) -> None:
        for layer in self.layers.values():
            layer.zero_grads()

    def num_parameters(self) -> int:
        return sum(layer.weight.size
                   + (0 if layer.bias is None else layer.bias.size)
                   for layer in self.layers.values())

    def parameter_list(self):
        return [p for _name, p, _g in self.named_parameters()]

    def gradient_list(self):
        return [g for _name, _p, g in self.named_parameters()]

    def named_parameters(self):
        for name, layer in self.layers.items():
            yield f"{name}.weight", layer.weight, layer.grad_weight
            if layer.bias is not None:
                yield f"{name}.bias", layer.bias, layer.grad_bias

    def astype(self, dtype) -> "NetworkParams":
        dtype = resolve_dtype(dtype)
        layers = {}
        for name, layer in self.layers.items():
            bias = None if layer.bias is None else layer.bias.astype(dtype)
            lp = LayerParams(layer.weight.astype(dtype), bias,
                             track_stats=layer.tracks_stats)
            if layer.tracks_stats:
                lp.running_mean = layer.running_mean.astype(dtype)
                lp.running_var = layer.running_var.astype(dtype)
            layers[name] = lp
        return NetworkParams(self.config, layers)


def init_params(config: NetworkConfig, rng: np.random.Generator,
                dtype="f64") -> NetworkParams:
    """Kaiming-style fan-in init for conv/deconv; BN scale 1, shift 0."""
    dtype = resolve_dtype(dtype)
    layers = {}
    for name, kind, spec in layer_inventory(config):
        if kind == "bn":
            c = spec["c"]
            layers[name] = LayerParams(np.ones(c, dtype=dtype),
                                       np.zeros(c, dtype=dtype),
                                       track_stats=True)
            continue
        k = spec["k"]
        fan_in = spec["c_in"] * k * k
        std = np.sqrt(2.0 / fan_in)
        if kind == "conv":
            shape = (spec["c_out"], spec["c_in"], k, k)
        else:
            shape = (spec["c_in"], spec["c_out"], k, k)
        w = (rng.standard_normal(shape) * std).astype(dtype)
        b = None if not spec.get("bias", True) else \
            np.zeros(spec["c_out"], dtype=dtype)
        layers[name] = LayerParams(w, b)
    return NetworkParams(config, layers)


def randomize_probe_point(params: NetworkParams, rng: np.random.Generator) -> None:
    """Move parameters to a generic point for finite-difference checks.

    Zero-initialized biases put many pre-activations exactly on the ReLU
    kink (dead receptive fields propagate exact zeros), where central
    differences and the chosen subgradient legitimately disagree. Drawing
    biases and BN shifts away from zero probes a generic smooth point.
    """
    for name, layer in params:
        if name.endswith((".bn1", ".bn2")):
            layer.weight[...] = rng.uniform(0.8, 1.2, layer.weight.shape)
        if layer.bias is not None:
            mag = rng.uniform(0.05, 0.3, layer.bias.shape)
            sign = np.where(rng.random(layer.bias.shape) < 0.5, -1.0, 1.0)
            layer.bias[...] = (sign * mag).astype(layer.bias.dtype)


def bilinear_deconv_kernel(k: int = DECONV_KERNEL, stride: int = 2) -> np.ndarray:
    """Separable bilinear-interpolation kernel for a stride-`stride` deconv."""
    center = (k - 1) / 2.0
    w1d = 1.0 - np.abs(np.arange(k) - center) / stride
    return np.outer(w1d, w1d)


def set_thermal_path_bilinear(params: NetworkParams) -> None:
    """Initialize the 1-channel thermal deconv cascade as bilinear upsampling."""
    kern = bilinear_deconv_kernel()
    for u in range(1, params.config.n_stages + 1):
        layer = params[f"thermal_up.deconv{u}"]
        layer.weight[...] = kern.astype(layer.weight.dtype)[None, None]
        layer.bias.fill(0.0)


# ---------------------------------------------------------------------------
# forward stages (each optionally records intermediates for backward)
# ---------------------------------------------------------------------------

def _stream(x, params, prefix, strides, cache):
    entries = [] if cache is not None else None
    for i, stride in enumerate(strides, 1):
        layer = params[f"{prefix}.conv{i}"]
        pre = ops.conv2d(x, layer, stride=stride, padding=1)
        if entries is not None:
            entries.append((x, pre))
        x = ops.relu(pre)
    if cache is not None:
        cache[prefix] = entries
    return x


def extract_thermal(t: np.ndarray, params: NetworkParams,
                    cache: dict | None = None) -> np.ndarray:
    """Three conv(3x3, stride 1)+ReLU stages on the LR thermal image."""
    if t.shape[1] != 1:
        raise ValueError(f"thermal input must be single-channel, got {t.shape[1]}")
    return _stream(t, params, "thermal", (1, 1, 1), cache)


def extract_visible(v: np.ndarray, params: NetworkParams,
                    cache: dict | None = None) -> np.ndarray:
    """Strided conv+ReLU stages downscaling the HR luminance to the LR grid."""
    if v.shape[1] != 1:
        raise ValueError(f"visible input must be single-channel (Y), got {v.shape[1]}")
    scale = params.config.scale
    if v.shape[2] % scale or v.shape[3] % scale:
        raise ValueError(
            f"visible extents {v.shape[2]}x{v.shape[3]} not divisible by {scale}")
    return _stream(v, params, "visible", params.config.visible_strides(), cache)


def fuse(f_v: np.ndarray, f_t: np.ndarray, params: NetworkParams,
         cache: dict | None = None) -> np.ndarray:
    """Elementwise sum of the two streams, then a 1x1 channel recalibration."""
    f_sum = ops.add(f_v, f_t)
    out = ops.conv2d(f_sum, params["fusion.conv"], stride=1, padding=0)
    if cache is not None:
        cache["fusion"] = f_sum
    return out


def residual_trunk(f0: np.ndarray, params: NetworkParams, mode: str = "eval",
                   update_stats: bool = True,
                   cache: dict | None = None) -> np.ndarray:
    """N residual blocks with periodic long skips and a global input skip.

    Block: conv-BN-ReLU-conv-BN plus identity add. Every skip_period blocks
    the activation from skip_period blocks earlier is added on top; the
    trunk output finally adds f0. An empty trunk is the identity.
    """
    config = params.config
    n, sp = config.n_blocks, config.skip_period
    if n == 0:
        if cache is not None:
            cache["trunk"] = []
        return f0
    acts = [f0]  # acts[i] = activation after block i (post skip adds)
    entries = [] if cache is not None else None
    x = f0
    for i in range(1, n + 1):
        b = f"block{i:02d}"
        y1 = ops.conv2d(x, params[f"{b}.conv1"], stride=1, padding=1)
        y2 = ops.batchnorm(y1, params[f"{b}.bn1"], mode=mode,
                           epsilon=config.bn_epsilon,
                           momentum=config.bn_momentum,
                           update_stats=update_stats)
        y3 = ops.relu(y2)
        y4 = ops.conv2d(y3, params[f"{b}.conv2"], stride=1, padding=1)
        y5 = ops.batchnorm(y4, params[f"{b}.bn2"], mode=mode,
                           epsilon=config.bn_epsilon,
                           momentum=config.bn_momentum,
                           update_stats=update_stats)
        out = x + y5
        if i % sp == 0 and i - sp >= 0:
            out = out + acts[i - sp]
        if entries is not None:
            entries.append((x, y1, y2, y3, y4))
        acts.append(out)
        x = out
    if cache is not None:
        cache["trunk"] = entries
    return x + f0


def reconstruct(f_n: np.ndarray, t: np.ndarray, params: NetworkParams,
                cache: dict | None = None) -> np.ndarray:
    """Cascaded x2 deconv reconstruction plus the parallel thermal upsample path."""
    config = params.config
    if f_n.shape[2:] != t.shape[2:]:
        raise ValueError(
            f"feature/thermal spatial mismatch {f_n.shape[2:]} vs {t.shape[2:]}")
    feat_entries = [] if cache is not None else None
    x = f_n
    for u in range(1, config.n_stages + 1):
        layer = params[f"upsample.deconv{u}"]
        pre = ops.deconv2d(x, layer, stride=2, padding=1)
        if feat_entries is not None:
            feat_entries.append((x, pre))
        x = ops.relu(pre)
    th_entries = [] if cache is not None else None
    u_t = t
    for u in range(1, config.n_stages + 1):
        layer = params[f"thermal_up.deconv{u}"]
        if th_entries is not None:
            th_entries.append(u_t)
        u_t = ops.deconv2d(u_t, layer, stride=2, padding=1)
    final = params["upsample.final_conv"]
    if config.final_conv_after_add:
        # broadcast the 1-channel thermal map across feature channels, then 3x3
        s = x + u_t
        i_sr = ops.conv2d(s, final, stride=1, padding=1)
        final_in = s
    else:
        f_re = ops.conv2d(x, final, stride=1, padding=1)
        i_sr = ops.add(f_re, u_t)
        final_in = x
    if cache is not None:
        cache["reconstruct"] = dict(feat=feat_entries, thermal=th_entries,
                                    final_in=final_in)
    return i_sr


def forward(v: np.ndarray | None, t: np.ndarray, config: NetworkConfig,
            params: NetworkParams, mode: str = "eval",
            update_stats: bool = False,
            cache: dict | None = None) -> np.ndarray:
    """Full network forward pass.

    For the TT variant the visible stream is fed the bicubic x`scale`
    upsample of t; any supplied v is ignored. Returns the super-resolved
    single-channel image at `scale` times the thermal resolution.
    """
    if t.ndim != 4 or t.shape[1] != 1:
        raise ValueError(f"thermal input must be (N, 1, h, w), got {t.shape}")
    scale = config.scale
    if config.variant == "TT":
        v = imgproc.bicubic_resize(t, t.shape[2] * scale, t.shape[3] * scale)
    else:
        if v is None:
            raise ValueError("VT variant requires a visible input")
        if v.shape[2:] != (t.shape[2] * scale, t.shape[3] * scale):
            raise ValueError(
                f"visible {v.shape[2:]} must be {scale}x the thermal "
                f"{t.shape[2:]}")
    if cache is not None:
        cache["inputs"] = (v, t)
        cache["mode"] = mode
    f_v = extract_visible(v, params, cache)
    f_t = extract_thermal(t, params, cache)
    f0 = fuse(f_v, f_t, params, cache)
    f_n = residual_trunk(f0, params, mode=mode, update_stats=update_stats,
                         cache=cache)
    i_sr = reconstruct(f_n, t, params, cache)
    assert_finite(i_sr, "srnet forward output")
    return i_sr


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _accumulate(layer: LayerParams, dw, db) -> None:
    layer.grad_weight += dw
    if db is not None:
        layer.grad_bias += db


def _stream_backward(g, entries, params, prefix, strides):
    for i in range(len(entries), 0, -1):
        x_in, pre = entries[i - 1]
        layer = params[f"{prefix}.conv{i}"]
        g = ops.relu_backward(pre, g)
        g, dw, db = ops.conv2d_backward(x_in, layer, g, stride=strides[i - 1],
                                        padding=1)
        _accumulate(layer, dw, db)
    return g


def backward(grad_isr: np.ndarray, cache: dict, params: NetworkParams):
    """Backpropagate through the cached forward pass.

    Accumulates parameter gradients in place and returns
    (grad_visible, grad_thermal) w.r.t. the network inputs. For the TT
    variant grad_visible refers to the internally upsampled image.
    """
    config = params.config
    mode = cache["mode"]
    rec = cache["reconstruct"]
    final = params["upsample.final_conv"]
    if config.final_conv_after_add:
        d_s, dw, db = ops.conv2d_backward(rec["final_in"], final, grad_isr,
                                          stride=1, padding=1)
        _accumulate(final, dw, db)
        d_feat = d_s
        d_ret = d_s.sum(axis=1, keepdims=True)
    else:
        d_feat, dw, db = ops.conv2d_backward(rec["final_in"], final, grad_isr,
                                             stride=1, padding=1)
        _accumulate(final, dw, db)
        d_ret = grad_isr
    # thermal upsample path
    g = d_ret
    for u in range(config.n_stages, 0, -1):
        layer = params[f"thermal_up.deconv{u}"]
        g, dw, db = ops.deconv2d_backward(rec["thermal"][u - 1], layer, g,
                                          stride=2, padding=1)
        _accumulate(layer, dw, db)
    grad_t_path = g
    # feature upsample path
    g = d_feat
    for u in range(config.n_stages, 0, -1):
        x_in, pre = rec["feat"][u - 1]
        layer = params[f"upsample.deconv{u}"]
        g = ops.relu_backward(pre, g)
        g, dw, db = ops.deconv2d_backward(x_in, layer, g, stride=2, padding=1)
        _accumulate(layer, dw, db)
    d_fn = g
    # residual trunk
    n, sp = config.n_blocks, config.skip_period
    if n == 0:
        d_f0 = d_fn
    else:
        g_acts = [None] * (n + 1)
        g_acts[n] = d_fn.copy()
        d_f0 = d_fn.copy()  # global skip
        for i in range(n, 0, -1):
            g = g_acts[i]
            if i % sp == 0 and i - sp >= 0:
                if g_acts[i - sp] is None:
                    g_acts[i - sp] = g.copy()
                else:
                    g_acts[i - sp] += g
            x, y1, y2, y3, y4 = cache["trunk"][i - 1]
            b = f"block{i:02d}"
            d5 = g
            d_y4, dg, db = ops.batchnorm_backward(y4, params[f"{b}.bn2"], d5,
                                                  mode=mode,
                                                  epsilon=config.bn_epsilon)
            _accumulate(params[f"{b}.bn2"], dg, db)
            d_y3, dw, db = ops.conv2d_backward(y3, params[f"{b}.conv2"], d_y4,
                                               stride=1, padding=1)
            _accumulate(params[f"{b}.conv2"], dw, db)
            d_y2 = ops.relu_backward(y2, d_y3)
            d_y1, dg, db = ops.batchnorm_backward(y1, params[f"{b}.bn1"], d_y2,
                                                  mode=mode,
                                                  epsilon=config.bn_epsilon)
            _accumulate(params[f"{b}.bn1"], dg, db)
            d_x, dw, db = ops.conv2d_backward(x, params[f"{b}.conv1"], d_y1,
                                              stride=1, padding=1)
            _accumulate(params[f"{b}.conv1"], dw, db)
            total = g + d_x
            if g_acts[i - 1] is None:
                g_acts[i - 1] = total
            else:
                g_acts[i - 1] += total
        d_f0 += g_acts[0]
    # fusion
    layer = params["fusion.conv"]
    d_fsum, dw, db = ops.conv2d_backward(cache["fusion"], layer, d_f0,
                                         stride=1, padding=0)
    _accumulate(layer, dw, db)
    # extraction streams
    grad_v = _stream_backward(d_fsum, cache["visible"], params, "visible",
                              config.visible_strides())
    grad_t = _stream_backward(d_fsum.copy(), cache["thermal"], params,
                              "thermal", (1, 1, 1))
    grad_t = grad_t + grad_t_path
    assert_finite(grad_t, "srnet backward grad")
    return grad_v, grad_t


# ---------------------------------------------------------------------------
# gradient verification harness
# ---------------------------------------------------------------------------

def network_gradcheck(config: NetworkConfig, seed: int = 0, t_hw=(2, 2),
                      h: float = 1e-5, refine_hs=(5e-5, 2e-6)):
    """Finite-difference check of every parameter tensor on a toy instance.

    Probes at a generic parameter point (randomized biases) against an L1
    target whose residuals are bounded away from zero, so the loss is
    locally smooth in every direction checked. Returns an ordered
    name -> max relative error mapping.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, rng, dtype="f64")
    randomize_probe_point(params, rng)
    th, tw = t_hw
    t = rng.standard_normal((1, 1, th, tw))
    v = rng.standard_normal((1, 1, th * config.scale, tw * config.scale))
    cache = {}
    i_sr = forward(v, t, config, params, mode="train", update_stats=False,
                   cache=cache)
    # residual magnitudes >= 0.5 and an unbalanced sign mix: no sign flips
    # under probing, no exact cancellation in whole-image bias gradients
    signs = np.where(rng.random(i_sr.shape) < 0.4, 1.0, -1.0)
    gt = i_sr + signs * rng.uniform(0.5, 1.5, size=i_sr.shape)

    def loss():
        out = forward(v, t, config, params, mode="train", update_stats=False)
        return l1_loss(out, gt)

    params.zero_grads()
    backward(l1_loss_backward(i_sr, gt), cache, params)
    results = {}
    for name, p, g in params.named_parameters():
        results[name] = ops.grad_check(loss, [p], [g], h=h,
                                       refine_hs=refine_hs)
    return results


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def l1_loss(i_sr: np.ndarray, i_gt: np.ndarray) -> float:
    """Sum of absolute pixel differences."""
    if i_sr.shape != i_gt.shape:
        raise ValueError(f"l1_loss: shape mismatch {i_sr.shape} vs {i_gt.shape}")
    return float(np.sum(np.abs(i_sr - i_gt)))


def l1_loss_backward(i_sr: np.ndarray, i_gt: np.ndarray) -> np.ndarray:
    """Gradient of l1_loss w.r.t. i_sr: elementwise sign, sign(0) = 0."""
    if i_sr.shape != i_gt.shape:
        raise ValueError(f"l1_loss: shape mismatch {i_sr.shape} vs {i_gt.shape}")
    return np.sign(i_sr - i_gt)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = {f.name: f.type for f in fields(NetworkConfig)}


def config_to_text(config: NetworkConfig) -> str:
    cp = configparser.ConfigParser()
    cp["network"] = {f.name: str(getattr(config, f.name))
                     for f in fields(NetworkConfig)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_from_section(section) -> NetworkConfig:
    kwargs = {}
    for f in fields(NetworkConfig):
        if f.name not in section:
            continue
        raw = section[f.name]
        if f.type in ("int", int):
            kwargs[f.name] = int(raw)
        elif f.type in ("float", float):
            kwargs[f.name] = float(raw)
        elif f.type in ("bool", bool):
            kwargs[f.name] = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            kwargs[f.name] = raw
    return NetworkConfig(**kwargs)


def config_from_text(text: str) -> NetworkConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    return config_from_section(cp["network"])


def save_checkpoint(path, params: NetworkParams) -> None:
    """Write config manifest plus all named tensors (MFT1 records)."""
    manifest = config_to_text(params.config).encode("utf-8")
    records = []
    for name, layer in params:
        for field, arr in layer.state_tensors():
            records.append((f"{name}.{field}", arr))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            save_tensor(fh, arr)


def load_checkpoint(path) -> NetworkParams:
    """Load a checkpoint, validating the record inventory against its config."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (mlen,) = struct.unpack("<I", fh.read(4))
        config = config_from_text(fh.read(mlen).decode("utf-8"))
        (n_records,) = struct.unpack("<I", fh.read(4))
        loaded = {}
        for _ in range(n_records):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            loaded[name] = load_tensor(fh)
    expected = []
    for name, kind, spec in layer_inventory(config):
        expected.append(f"{name}.weight")
        if spec.get("bias", True):
            expected.append(f"{name}.bias")
        if kind == "bn":
            expected.append(f"{name}.running_mean")
            expected.append(f"{name}.running_var")
    if sorted(expected) != sorted(loaded):
        missing = set(expected) - set(loaded)
        extra = set(loaded) - set(expected)
        raise InvariantError(
            f"checkpoint inventory mismatch (missing {sorted(missing)[:4]}, "
            f"extra {sorted(extra)[:4]})")
    dtype = next(iter(loaded.values())).dtype
    params = init_params(config, np.random.default_rng(0), dtype=dtype)
    for name, layer in params:
        for field, _ in list(layer.state_tensors()):
            layer.set_state_tensor(field, loaded[f"{name}.{field}"])
    return params
