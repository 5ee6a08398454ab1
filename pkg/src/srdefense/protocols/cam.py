"""Class activation maps for classifiers whose head is a single affine layer."""

from fractions import Fraction

import numpy as np
import torch

from .. import imaging
from ..classifier import to_tensor
from ..errors import ConfigError


def class_activation_map(feature_maps, weights, out_hw):
    """sum_k weights[k] * feature_maps[k], min-max scaled to [0, 1], bilinear-upsampled to ``out_hw``."""
    fmaps = np.asarray(feature_maps, dtype=np.float64)
    heat = np.tensordot(np.asarray(weights, dtype=np.float64), fmaps, axes=1)
    span = heat.max() - heat.min()
    heat = (heat - heat.min()) / span if span > 0 else np.zeros_like(heat)
    return resize_map(heat, out_hw)


def resize_map(heat, out_hw):
    h, w = heat.shape
    if (h, w) == tuple(out_hw):
        return heat
    fy = Fraction(out_hw[0], h)
    if Fraction(out_hw[1], w) != fy:
        raise ConfigError(f"map {h}x{w} cannot be scaled uniformly to {out_hw}")
    return imaging.interp_resize(heat[..., None], fy, "bilinear")[..., 0]


def _affine_head(classifier):
    fc = getattr(classifier.module, "fc", None)
    if (classifier.spec is not None and classifier.spec.arch != "smallcnn") or not isinstance(fc, torch.nn.Linear):
        raise ConfigError("class activation maps need a GAP -> single linear layer head")
    return fc


@torch.no_grad()
def cam(classifier, img, cls=None):
    """Heatmap in [0, 1] of ``img``'s dims for class ``cls`` (default: predicted class)."""
    fc = _affine_head(classifier)
    img = np.asarray(img, dtype=np.float64)
    fmaps = classifier.module.feature_maps(to_tensor(img, classifier.dtype))[0].double().numpy()
    k = fc.weight.shape[0]
    if cls is None:
        cls = int(classifier.predict(img))
    if not 0 <= cls < k:
        raise ConfigError(f"class {cls} outside [0, {k})")
    return class_activation_map(fmaps, fc.weight[cls].double().numpy(), img.shape[:2])


def peak(heat):
    return np.unravel_index(int(np.argmax(heat)), heat.shape)


def cam_agreement(classifier, clean, adversarial, defended):
    """How often the attacked / defended CAM peak coincides with the clean CAM peak.

    Each image uses its own predicted class; defended maps are resized to
    the clean dims before comparison.
    """
    hits_adv = hits_def = 0
    for c, a, d in zip(clean, adversarial, defended):
        ref = peak(cam(classifier, c))
        hits_adv += peak(cam(classifier, a)) == ref
        hits_def += peak(resize_map(cam(classifier, d), c.shape[:2])) == ref
    n = len(clean)
    return {"adversarial_match": hits_adv / n, "defended_match": hits_def / n, "count": n}
