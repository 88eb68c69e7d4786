"""Resampling, color conversion, quality metrics, and image file I/O.

Images are float arrays in [0, 1] with channel-first layout (C, H, W).
Thermal and depth sources are 16-bit; visible sources 8-bit.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

BT601_WEIGHTS = (0.299, 0.587, 0.114)

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


# ---------------------------------------------------------------------------
# bicubic resampling
# ---------------------------------------------------------------------------

def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    at = np.abs(t)
    at2 = at * at
    at3 = at2 * at
    near = (a + 2.0) * at3 - (a + 3.0) * at2 + 1.0
    far = a * at3 - 5.0 * a * at2 + 8.0 * a * at - 4.0 * a
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) bicubic weight matrix, clamped edges.

    When downscaling, the kernel support widens by the scale ratio
    (anti-aliasing); weights are renormalized so rows sum to one, which
    makes constant signals exactly invariant.
    """
    scale = n_in / n_out
    support_scale = max(1.0, scale)
    radius = 2.0 * support_scale
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    left = np.floor(centers - radius).astype(int) + 1
    n_taps = int(math.ceil(2.0 * radius)) + 1
    idx = left[:, None] + np.arange(n_taps)[None, :]
    w = _cubic((idx - centers[:, None]) / support_scale)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, n_in - 1)
    mat = np.zeros((n_out, n_in))
    for row in range(n_out):
        np.add.at(mat[row], idx[row], w[row])
    return mat


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize (a = -0.5) over the last two axes.

    Accepts any array shaped (..., H, W). Identity resizes return a
    bit-equal copy. Downscaling widens the kernel support for anti-aliasing.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bicubic_resize: bad output extents {out_h}x{out_w}")
    h, w = img.shape[-2], img.shape[-1]
    if h == out_h and w == out_w:
        return img.copy()
    lead = img.shape[:-2]
    flat = img.reshape(-1, h, w)
    out = flat
    if h != out_h:
        mr = _resize_matrix(h, out_h).astype(img.dtype)
        out = np.einsum("oh,nhw->now", mr, out)
    if w != out_w:
        mc = _resize_matrix(w, out_w).astype(img.dtype)
        out = np.einsum("ow,nhw->nho", mc, out)
    return np.ascontiguousarray(out.reshape(*lead, out_h, out_w))


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 luminance of a (..., 3, H, W) image in [0, 1], keeping one channel."""
    if img.shape[-3] != 3:
        raise ValueError(f"rgb_to_y: expected 3 channels, got {img.shape[-3]}")
    r, g, b = img[..., 0, :, :], img[..., 1, :, :], img[..., 2, :, :]
    y = BT601_WEIGHTS[0] * r + BT601_WEIGHTS[1] * g + BT601_WEIGHTS[2] * b
    return y[..., None, :, :]


# ---------------------------------------------------------------------------
# quality metrics
# ---------------------------------------------------------------------------

def _crop_border(img: np.ndarray, crop: int) -> np.ndarray:
    if crop == 0:
        return img
    h, w = img.shape[-2], img.shape[-1]
    if h <= 2 * crop or w <= 2 * crop:
        raise ValueError(f"border crop {crop} leaves no pixels in {h}x{w}")
    return img[..., crop:h - crop, crop:w - crop]


def psnr(a: np.ndarray, b: np.ndarray, border_crop: int = 8) -> float:
    """Peak SNR in dB for [0, 1] images; +inf for identical inputs."""
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    ac = _crop_border(np.asarray(a, dtype=np.float64), border_crop)
    bc = _crop_border(np.asarray(b, dtype=np.float64), border_crop)
    mse = float(np.mean((ac - bc) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_1d(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    g = np.exp(-np.arange(-half, half + 1) ** 2 / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, k1d: np.ndarray) -> np.ndarray:
    """Separable 'valid'-mode correlation with a 1-D kernel on both axes."""
    k = len(k1d)
    h, w = img.shape
    rows = np.zeros((h - k + 1, w), dtype=np.float64)
    for i, kv in enumerate(k1d):
        rows += kv * img[i:i + h - k + 1, :]
    out = np.zeros((h - k + 1, w - k + 1), dtype=np.float64)
    for j, kv in enumerate(k1d):
        out += kv * rows[:, j:j + w - k + 1]
    return out


def ssim(a: np.ndarray, b: np.ndarray, border_crop: int = 8) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5, peak 1).

    Single scale, luminance images only. Inputs may be (H, W) or any
    leading singleton channel layout that squeezes to 2-D.
    """
    a2 = np.squeeze(np.asarray(a, dtype=np.float64))
    b2 = np.squeeze(np.asarray(b, dtype=np.float64))
    if a2.shape != b2.shape or a2.ndim != 2:
        raise ValueError(f"ssim: need matching 2-D images, got {a.shape} vs {b.shape}")
    a2 = _crop_border(a2, border_crop)
    b2 = _crop_border(b2, border_crop)
    if min(a2.shape) < _SSIM_WINDOW:
        raise ValueError(
            f"ssim: cropped image {a2.shape} smaller than {_SSIM_WINDOW}x"
            f"{_SSIM_WINDOW} window")
    k1d = _gaussian_1d(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_a = _filter_valid(a2, k1d)
    mu_b = _filter_valid(b2, k1d)
    var_a = _filter_valid(a2 * a2, k1d) - mu_a ** 2
    var_b = _filter_valid(b2 * b2, k1d) - mu_b ** 2
    cov = _filter_valid(a2 * b2, k1d) - mu_a * mu_b
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _write_pgm16(path: Path, data_u16: np.ndarray) -> None:
    h, w = data_u16.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data_u16.astype(">u2").tobytes())


def _write_pgm8(path: Path, data_u8: np.ndarray) -> None:
    h, w = data_u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data_u8.astype(np.uint8).tobytes())


def _read_pgm(path: Path) -> np.ndarray:
    """Binary PGM (P5) reader; returns uint8 or uint16 (big-endian source)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1  # single whitespace after maxval
    if maxval > 255:
        data = np.frombuffer(raw, dtype=">u2", count=h * w, offset=pos)
        return data.reshape(h, w).astype(np.uint16)
    data = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=pos)
    return data.reshape(h, w)


def write_image(path, img: np.ndarray, bitdepth: int = 8) -> None:
    """Write a (C, H, W) [0, 1] image; format chosen by extension.

    PNG supports 8-bit gray/RGB and 16-bit gray; PGM supports 8/16-bit gray.
    """
    path = Path(path)
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if img.ndim == 2:
        img = img[None]
    c = img.shape[0]
    suffix = path.suffix.lower()
    if bitdepth == 8:
        q = np.round(img * 255.0).astype(np.uint8)
    elif bitdepth == 16:
        q = np.round(img * 65535.0).astype(np.uint16)
    else:
        raise ValueError(f"unsupported bitdepth {bitdepth}")
    if suffix == ".pgm":
        if c != 1:
            raise ValueError("PGM stores single-channel images only")
        if bitdepth == 8:
            _write_pgm8(path, q[0])
        else:
            _write_pgm16(path, q[0])
    elif suffix == ".png":
        if c == 1 and bitdepth == 16:
            Image.fromarray(q[0]).save(path)  # uint16 -> I;16 PNG
        elif c == 1:
            Image.fromarray(q[0], mode="L").save(path)
        elif c == 3 and bitdepth == 8:
            Image.fromarray(q.transpose(1, 2, 0), mode="RGB").save(path)
        else:
            raise ValueError(f"unsupported PNG layout: {c} channels @ {bitdepth}-bit")
    else:
        raise ValueError(f"unsupported image format {suffix!r}")


def read_image(path) -> np.ndarray:
    """Read an image into (C, H, W) float64 in [0, 1] (16-bit scaled by 1/65535)."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        data = _read_pgm(path)
        peak = 65535.0 if data.dtype == np.uint16 else 255.0
        return (data.astype(np.float64) / peak)[None]
    with Image.open(path) as im:
        if im.mode in ("I", "I;16"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
            return arr[None]
        if im.mode == "L":
            return (np.asarray(im, dtype=np.float64) / 255.0)[None]
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
        return arr.transpose(2, 0, 1)


def write_depth_mm(path, depth_m: np.ndarray) -> None:
    """Store a depth map (meters, 0 = invalid) as u16 millimeters."""
    path = Path(path)
    mm = np.round(np.clip(depth_m, 0.0, 65.535) * 1000.0).astype(np.uint16)
    if mm.ndim == 3:
        mm = mm[0]
    if path.suffix.lower() == ".pgm":
        _write_pgm16(path, mm)
    elif path.suffix.lower() == ".png":
        Image.fromarray(mm).save(path)
    else:
        raise ValueError(f"unsupported depth format {path.suffix!r}")


def read_depth_mm(path) -> np.ndarray:
    """Read a u16 millimeter depth image back to meters, shape (1, H, W)."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        data = _read_pgm(path)
        if data.dtype != np.uint16:
            raise ValueError(f"{path}: depth must be 16-bit")
        return (data.astype(np.float64) / 1000.0)[None]
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.float64) / 1000.0
        return arr[None]
