"""Pixel-level primitives.

Images are numpy arrays of shape (H, W, C) with float values in [0, 1]; a
leading batch axis (N, H, W, C) is accepted where noted.
"""

from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import fft

from .errors import ChannelError, DecodeError, ShapeError

# full-range BT.601
_RGB2YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168735892, -0.331264108, 0.5],
        [0.5, -0.418687589, -0.081312411],
    ]
)
_YCC2RGB = np.linalg.inv(_RGB2YCC)
_CHROMA_OFFSET = np.array([0.0, 0.5, 0.5])

METHODS = ("nearest", "bilinear", "bicubic")
STRATEGIES = ("US", "US_DS", "DS_US")


def clamp(img):
    return np.clip(img, 0.0, 1.0)


def as_image(img, min_size=1):
    """Validate and coerce to a float (H, W, C) array."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise ShapeError(f"expected an (H, W, C) image, got shape {img.shape}")
    if img.shape[2] not in (1, 3):
        raise ChannelError(f"expected 1 or 3 channels, got {img.shape[2]}")
    if img.shape[0] < min_size or img.shape[1] < min_size:
        raise ShapeError(f"image {img.shape[:2]} smaller than {min_size}x{min_size}")
    return img


def rgb_to_ycbcr(img):
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-1] != 3:
        raise ChannelError(f"rgb_to_ycbcr needs 3 channels, got {img.shape[-1]}")
    return img @ _RGB2YCC.T + _CHROMA_OFFSET


def ycbcr_to_rgb(img):
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-1] != 3:
        raise ChannelError(f"ycbcr_to_rgb needs 3 channels, got {img.shape[-1]}")
    return clamp((img - _CHROMA_OFFSET) @ _YCC2RGB.T)


def _cubic(s, a=-0.5):
    s = np.abs(s)
    return np.where(
        s <= 1,
        (a + 2) * s**3 - (a + 3) * s**2 + 1,
        np.where(s < 2, a * s**3 - 5 * a * s**2 + 8 * a * s - 4 * a, 0.0),
    )


def resample_matrix(n_in, n_out, method):
    """Return the (n_out, n_in) 1-D interpolation matrix.

    Half-pixel-centred coordinates, edge replication at the borders and no
    kernel stretching on downsampling (plain decimation).
    """
    scale = n_in / n_out
    out = np.arange(n_out)
    mat = np.zeros((n_out, n_in))
    if method == "nearest":
        src = np.minimum(np.floor((out + 0.5) * scale).astype(int), n_in - 1)
        mat[out, src] = 1.0
        return mat
    pos = (out + 0.5) * scale - 0.5
    base = np.floor(pos).astype(int)
    frac = pos - base
    if method == "bilinear":
        taps = {0: 1.0 - frac, 1: frac}
    elif method == "bicubic":
        taps = {k: _cubic(frac - k) for k in (-1, 0, 1, 2)}
    else:
        raise ValueError(f"unknown interpolation method {method!r}")
    for k, w in taps.items():
        idx = np.clip(base + k, 0, n_in - 1)
        np.add.at(mat, (out, idx), w)
    return mat


def _scaled(n, factor):
    out = Fraction(n) * factor
    if out.denominator != 1 or out < 1:
        raise ShapeError(f"factor {factor} applied to {n} pixels is not a positive integer size")
    return int(out)


def _as_fraction(factor):
    if isinstance(factor, Fraction):
        return factor
    if isinstance(factor, (int, np.integer)):
        return Fraction(int(factor))
    return Fraction(str(float(factor))).limit_denominator(10_000)


def interp_resize(img, factor, method="bicubic"):
    """Resize an (H, W, C) or (N, H, W, C) array by ``factor``."""
    factor = _as_fraction(factor)
    if factor <= 0:
        raise ShapeError("resize factor must be positive")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-3], img.shape[-2]
    ho, wo = _scaled(h, factor), _scaled(w, factor)
    if (ho, wo) == (h, w):
        return clamp(img.copy())
    rows = resample_matrix(h, ho, method)
    cols = resample_matrix(w, wo, method)
    out = np.einsum("ih,...hwc,jw->...ijc", rows, img, cols, optimize=True)
    return clamp(out)


def resize_strategy(img, factor=2, method="bicubic", strategy="US"):
    factor = _as_fraction(factor)
    if strategy == "US":
        return interp_resize(img, factor, method)
    if strategy == "US_DS":
        return interp_resize(interp_resize(img, factor, method), 1 / factor, method)
    if strategy == "DS_US":
        return interp_resize(interp_resize(img, 1 / factor, method), factor, method)
    raise ValueError(f"unknown resize strategy {strategy!r}")


def dct2(plane):
    return fft.dctn(np.asarray(plane, dtype=np.float64), type=2, norm="ortho")


def idct2(coeffs):
    return fft.idctn(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho")


def high_band_mask(shape):
    """Boolean mask of DCT coefficients above the half band on either axis."""
    u = np.arange(shape[0])[:, None] / shape[0]
    v = np.arange(shape[1])[None, :] / shape[1]
    return np.maximum(u, v) >= 0.5


def high_band_energy(img):
    """Mean squared DCT coefficient above the half band, averaged over channels."""
    img = as_image(img)
    mask = high_band_mask(img.shape[:2])
    return float(np.mean([np.mean(dct2(img[..., c])[mask] ** 2) for c in range(img.shape[2])]))


def to_uint8(img):
    return np.round(clamp(np.asarray(img, dtype=np.float64)) * 255.0).astype(np.uint8)


def read_png(path):
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                raise DecodeError(f"{path}: unsupported PNG mode {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr.astype(np.float64) / 255.0


def write_png(path, img):
    arr = to_uint8(as_image(img))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr[..., 0] if arr.shape[2] == 1 else arr).save(path, format="PNG")


def psnr(reference, test):
    mse = float(np.mean((np.asarray(reference, float) - np.asarray(test, float)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)
