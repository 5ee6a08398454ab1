"""DCT spectrum and high-frequency comparison of clean, attacked and defended images."""

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .. import imaging
from ..errors import ShapeError


def luma(img):
    img = np.asarray(img, dtype=np.float64)
    return imaging.rgb_to_ycbcr(img)[..., 0] if img.shape[-1] == 3 else img[..., 0]


def log_spectrum(plane):
    """log(1 + |DCT|) rescaled to [0, 1]; same dims as ``plane``."""
    mag = np.log1p(np.abs(imaging.dct2(plane)))
    return _unit(mag)


def high_pass_view(plane):
    """Inverse DCT of the above-half-band coefficients, as |value| scaled to [0, 1]."""
    coeffs = imaging.dct2(plane) * imaging.high_band_mask(plane.shape)
    return _unit(np.abs(imaging.idct2(coeffs)))


def _unit(x):
    top = x.max() - x.min()
    return (x - x.min()) / top if top > 0 else np.zeros_like(x)


def difference(a, b):
    """|a - b| per pixel (max over channels), unscaled."""
    return np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).max(axis=-1)


def align(defended, reference):
    """Bring a S-times larger defended image back to ``reference`` dims by bicubic downsampling."""
    h, w = reference.shape[:2]
    dh, dw = defended.shape[:2]
    if (dh, dw) == (h, w):
        return defended
    if dh % h or dw % w or dh // h != dw // w:
        raise ShapeError(f"defended image {dh}x{dw} is not an integer multiple of {h}x{w}")
    return imaging.interp_resize(defended, Fraction(h, dh), "bicubic")


@dataclass
class SpectrumReport:
    panels: list = field(default_factory=list)  # per image: name -> 2-D array in [0, 1]
    energy: dict = field(default_factory=dict)  # mean high-band energy per image kind
    files: list = field(default_factory=list)


def spectrum_report(clean, adversarial, defended, scale=None, out_dir=None):
    """Spectra, high-pass views and differences for aligned (clean, adversarial, defended) batches."""
    clean, adversarial, defended = (np.asarray(a, dtype=np.float64) for a in (clean, adversarial, defended))
    if clean.shape != adversarial.shape or len(defended) != len(clean):
        raise ShapeError("clean, adversarial and defended batches must align")
    scale = scale or defended.shape[1] // clean.shape[1]
    report = SpectrumReport()
    upsampled = imaging.interp_resize(clean, scale, "bicubic") if scale > 1 else clean
    upsampled_adv = imaging.interp_resize(adversarial, scale, "bicubic") if scale > 1 else adversarial
    report.energy = {
        "clean": float(np.mean([imaging.high_band_energy(luma(x)) for x in clean])),
        "adversarial": float(np.mean([imaging.high_band_energy(luma(x)) for x in adversarial])),
        "defended": float(np.mean([imaging.high_band_energy(luma(x)) for x in defended])),
        "bicubic_clean": float(np.mean([imaging.high_band_energy(luma(x)) for x in upsampled])),
        "bicubic_adversarial": float(np.mean([imaging.high_band_energy(luma(x)) for x in upsampled_adv])),
    }
    for i, (c, a, d) in enumerate(zip(clean, adversarial, defended)):
        panels = {}
        for name, img in (("clean", c), ("adversarial", a), ("defended", d)):
            panels[f"{name}_spectrum"] = log_spectrum(luma(img))
            panels[f"{name}_highpass"] = high_pass_view(luma(img))
        panels["diff_adversarial"] = difference(a, c)
        panels["diff_defended"] = difference(align(d, c), c)
        report.panels.append(panels)
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            for name, panel in panels.items():
                path = out / f"{i:04d}_{name}.png"
                top = panel.max()
                # difference panels are stretched for visibility; zero stays zero
                view = panel / top if name.startswith("diff") and top > 0 else panel
                imaging.write_png(path, view[..., None])
                report.files.append(str(path))
    return report
