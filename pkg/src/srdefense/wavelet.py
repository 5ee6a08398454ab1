"""Multilevel 2-D DWT and wavelet-shrinkage denoising."""

from dataclasses import dataclass, field

import numpy as np

from . import imaging
from .errors import ConfigError, ShapeError

# orthonormal Daubechies scaling filters with the given number of vanishing moments
FILTERS = {
    "haar": np.array([1.0, 1.0]) / np.sqrt(2.0),
    "db2": np.array([1 + np.sqrt(3), 3 + np.sqrt(3), 3 - np.sqrt(3), 1 - np.sqrt(3)]) / (4 * np.sqrt(2)),
    "db4": np.array(
        [
            0.2303778133088965,
            0.7148465705529157,
            0.6308807679298589,
            -0.027983769416859854,
            -0.18703481171909309,
            0.030841381835560764,
            0.0328830116668852,
            -0.010597401785069032,
        ]
    ),
}


def _filters(family):
    try:
        lo = FILTERS[family]
    except KeyError:
        raise ConfigError(f"unknown wavelet family {family!r}") from None
    hi = lo[::-1] * (-1.0) ** np.arange(len(lo))
    return lo, hi


def _analysis(x, taps, axis):
    out = None
    for n, c in enumerate(taps):
        term = c * np.take(np.roll(x, -n, axis=axis), np.arange(0, x.shape[axis], 2), axis=axis)
        out = term if out is None else out + term
    return out


def _synthesis(coeffs, taps, axis):
    shape = list(coeffs.shape)
    shape[axis] *= 2
    up = np.zeros(shape)
    index = [slice(None)] * up.ndim
    index[axis] = slice(0, None, 2)
    up[tuple(index)] = coeffs
    out = np.zeros(shape)
    for n, c in enumerate(taps):
        out += c * np.roll(up, n, axis=axis)
    return out


@dataclass
class WaveletPyramid:
    """Approximation band plus per-level ``(LH, HL, HH)`` details, finest level first.

    The two letters of a detail band name the filter applied along axis 0
    and axis 1 respectively.
    """

    approx: np.ndarray
    details: list = field(default_factory=list)
    family: str = "db4"
    mode: str = "periodization"

    @property
    def levels(self):
        return len(self.details)

    def coefficient_count(self):
        return self.approx.size + sum(b.size for lvl in self.details for b in lvl)


def dwt2(plane, family="db4", levels=2):
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ShapeError(f"dwt2 expects a 2-D plane, got shape {plane.shape}")
    if levels < 1:
        raise ConfigError("decomposition depth must be >= 1")
    block = 2**levels
    if plane.shape[0] < block or plane.shape[1] < block or plane.shape[0] % block or plane.shape[1] % block:
        raise ShapeError(f"plane {plane.shape} does not support {levels} dyadic levels")
    lo, hi = _filters(family)
    details = []
    cur = plane
    for _ in range(levels):
        low = _analysis(cur, lo, axis=1)
        high = _analysis(cur, hi, axis=1)
        ll = _analysis(low, lo, axis=0)
        lh = _analysis(high, lo, axis=0)
        hl = _analysis(low, hi, axis=0)
        hh = _analysis(high, hi, axis=0)
        details.append((lh, hl, hh))
        cur = ll
    return WaveletPyramid(cur, details, family)


def idwt2(pyr):
    lo, hi = _filters(pyr.family)
    cur = pyr.approx
    for lh, hl, hh in reversed(pyr.details):
        low = _synthesis(cur, lo, axis=0) + _synthesis(hl, hi, axis=0)
        high = _synthesis(lh, lo, axis=0) + _synthesis(hh, hi, axis=0)
        cur = _synthesis(low, lo, axis=1) + _synthesis(high, hi, axis=1)
    return cur


def _check_t(t):
    if t < 0:
        raise ConfigError(f"threshold must be non-negative, got {t}")


def soft_threshold(coeffs, t):
    _check_t(t)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return np.sign(coeffs) * np.maximum(np.abs(coeffs) - t, 0.0)


def soft_threshold_multiplicative(coeffs, t):
    """Soft shrinkage written as ``max(0, 1 - t/|x|) * x`` (0 maps to 0)."""
    _check_t(t)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    mag = np.abs(coeffs)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        gain = np.where(mag > 0, np.maximum(0.0, 1.0 - t / mag), 0.0)
    return gain * coeffs


def hard_threshold(coeffs, t):
    _check_t(t)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return np.where(np.abs(coeffs) >= t, coeffs, 0.0)


def visu_threshold(n, sigma):
    """Universal threshold for ``n`` samples at noise level ``sigma``."""
    return float(sigma * np.sqrt(2.0 * np.log(n)))


def bayes_threshold(subband, sigma):
    w = np.asarray(subband, dtype=np.float64)
    if w.size == 0:
        raise ShapeError("empty subband")
    var_obs = float(np.mean(w**2))
    noise_var = sigma**2
    if noise_var < var_obs:
        return noise_var / np.sqrt(var_obs - noise_var)
    return float(np.max(np.abs(w)))


def estimate_sigma(plane, family="db4"):
    """Robust noise estimate from the finest diagonal band: median|HH1| / 0.6745."""
    pyr = dwt2(plane, family, 1)
    return float(np.median(np.abs(pyr.details[0][2])) / 0.6745)


@dataclass
class ShrinkConfig:
    mode: str = "bayes"  # bayes | visu
    thresholding: str = "soft"  # soft | hard
    sigma: object = 0.04  # float, or "estimate"
    levels: int = 2
    family: str = "db4"

    def __post_init__(self):
        if self.mode not in ("bayes", "visu"):
            raise ConfigError(f"shrink mode must be bayes or visu, got {self.mode!r}")
        if self.thresholding not in ("soft", "hard"):
            raise ConfigError(f"thresholding must be soft or hard, got {self.thresholding!r}")
        if self.sigma != "estimate" and (not np.isfinite(float(self.sigma)) or float(self.sigma) < 0):
            raise ConfigError(f"sigma must be >= 0 or 'estimate', got {self.sigma!r}")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        _filters(self.family)


def shrink_pyramid(pyr, sigma, cfg, pixel_count=None):
    """Copy of ``pyr`` with every detail band thresholded; the approximation band is untouched."""
    shrink = soft_threshold if cfg.thresholding == "soft" else hard_threshold
    if cfg.mode == "visu":
        n = pixel_count if pixel_count is not None else pyr.coefficient_count()
        t_universal = visu_threshold(n, sigma)
    details = []
    for bands in pyr.details:
        out = []
        for band in bands:
            t = t_universal if cfg.mode == "visu" else bayes_threshold(band, sigma)
            out.append(shrink(band, t))
        details.append(tuple(out))
    return WaveletPyramid(pyr.approx, details, pyr.family, pyr.mode)


def denoise_plane(plane, cfg):
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    block = 2**cfg.levels
    ph, pw = (-h) % block, (-w) % block
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="edge") if ph or pw else plane
    sigma = estimate_sigma(padded, cfg.family) if cfg.sigma == "estimate" else float(cfg.sigma)
    pyr = dwt2(padded, cfg.family, cfg.levels)
    rec = idwt2(shrink_pyramid(pyr, sigma, cfg, pixel_count=h * w))
    return rec[:h, :w]


def wavelet_denoise(img, cfg=None):
    """Denoise an (H, W, C) image: YCbCr, per-channel shrinkage, back to RGB."""
    cfg = cfg or ShrinkConfig()
    img = imaging.as_image(img)
    if img.shape[2] == 3:
        ycc = imaging.rgb_to_ycbcr(img)
        out = np.stack([denoise_plane(ycc[..., c], cfg) for c in range(3)], axis=-1)
        return imaging.ycbcr_to_rgb(out)
    return imaging.clamp(denoise_plane(img[..., 0], cfg)[..., None])
