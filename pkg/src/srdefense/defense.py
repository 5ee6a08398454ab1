"""Wavelet denoising -> super-resolution defense, and its white-box adapters."""

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import imaging, wavelet
from .attacks import draw_diversity, resize_pad
from .classifier import LossGradient, to_numpy, to_tensor
from .errors import ConfigError
from .sr import SRNet, super_resolve

STAGES = ("none", "wd_only", "sr_only", "wd_sr")


@dataclass
class DefenseConfig:
    shrink: wavelet.ShrinkConfig = field(default_factory=wavelet.ShrinkConfig)
    sr_method: str = "tiny-edsr"
    scale: int = 2
    stages: str = "wd_sr"
    resize_strategy: str = "US"  # interpolation methods only
    random_pad_prob: float = 0.0  # optional stochastic resize-pad before denoising

    def __post_init__(self):
        if isinstance(self.shrink, dict):
            self.shrink = wavelet.ShrinkConfig(**self.shrink)
        if self.stages not in STAGES:
            raise ConfigError(f"stages must be one of {STAGES}, got {self.stages!r}")
        if self.scale not in (1, 2, 3, 4):
            raise ConfigError(f"scale must be in 1..4, got {self.scale}")
        if self.resize_strategy not in imaging.STRATEGIES:
            raise ConfigError(f"unknown resize strategy {self.resize_strategy!r}")

    @property
    def denoise(self):
        return self.stages in ("wd_only", "wd_sr")

    @property
    def upscale(self):
        return self.stages in ("sr_only", "wd_sr")

    @property
    def output_scale(self):
        if not self.upscale or (self.sr_method != "tiny-edsr" and self.resize_strategy != "US"):
            return 1
        return self.scale

    @property
    def stochastic(self):
        return self.random_pad_prob > 0

    def to_dict(self):
        return asdict(self)


class Defense:
    """Callable image restoration: ``Defense(cfg, net)(images) -> restored images``.

    Denoising always precedes super-resolution. With stochastic resize-pad
    enabled, pass ``rng`` for reproducible draws.
    """

    def __init__(self, cfg=None, sr_net=None):
        self.cfg = cfg or DefenseConfig()
        if self.cfg.upscale and self.cfg.sr_method == "tiny-edsr" and self.cfg.scale != 1:
            if not isinstance(sr_net, SRNet):
                raise ConfigError("tiny-edsr defense needs a trained SRNet")
        self.sr_net = sr_net

    @property
    def output_scale(self):
        return self.cfg.output_scale

    def __call__(self, images, rng=None):
        images = np.asarray(images, dtype=np.float64)
        single = images.ndim == 3
        batch = images[None] if single else images
        if self.cfg.stochastic:
            rng = rng if rng is not None else np.random.default_rng(0)
            batch = np.stack([self._random_pad(img, rng) for img in batch])
        if self.cfg.denoise:
            batch = np.stack([wavelet.wavelet_denoise(img, self.cfg.shrink) for img in batch])
        if self.cfg.upscale:
            batch = self._upscale(batch)
        out = imaging.clamp(batch)
        return out[0] if single else out

    def _random_pad(self, img, rng):
        draw = draw_diversity(rng, img.shape[:2], self.cfg.random_pad_prob)
        if draw is None:
            return img
        t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))
        return resize_pad(t, *draw).numpy().transpose(1, 2, 0)

    def _upscale(self, batch):
        cfg = self.cfg
        if cfg.scale == 1:
            return batch
        if cfg.sr_method == "tiny-edsr":
            return super_resolve(self.sr_net, batch, cfg.scale)
        return imaging.resize_strategy(batch, cfg.scale, cfg.sr_method, cfg.resize_strategy)


def defend(img, cfg=None, sr_net=None):
    return Defense(cfg, sr_net)(img)


def defended_predict(classifier, images, defense):
    return classifier.predict(defense(images))


class _StraightThrough(torch.autograd.Function):
    """Forward: the (non-differentiable) defense. Backward: identity, average-pooled by the SR scale."""

    @staticmethod
    def forward(ctx, x, fn, scale):
        ctx.scale = scale
        return to_tensor(fn(to_numpy(x)), x.dtype)

    @staticmethod
    def backward(ctx, grad):
        if ctx.scale > 1:
            grad = F.avg_pool2d(grad, ctx.scale)
        return grad, None, None


class DefendedTarget:
    """Attack target seen through the full defense (white-box setting).

    ``forward`` runs defense then classifier with a BPDA backward pass;
    ``loss_gradient`` averages ``eot_samples`` such gradients, each with
    fresh draws of any stochastic defense element.
    """

    def __init__(self, classifier, defense, eot_samples=1, seed=0):
        if eot_samples < 1:
            raise ConfigError("eot_samples must be >= 1")
        self.classifier = classifier
        self.defense = defense
        self.eot_samples = eot_samples
        self.rng = np.random.default_rng(seed)

    def _restore(self, x):
        return self.defense(x, rng=self.rng)

    def forward(self, x):
        if self.defense.cfg.stages == "none" and not self.defense.cfg.stochastic:
            return self.classifier.forward(x)
        return self.classifier.forward(_StraightThrough.apply(x, self._restore, self.defense.output_scale))

    def loss_gradient(self, x, y):
        samples = self.eot_samples if self.defense.cfg.stochastic else 1
        mean = None
        for k in range(samples):
            xr = x.detach().requires_grad_(True)
            losses = F.cross_entropy(self.forward(xr), y, reduction="none")
            (g,) = torch.autograd.grad(losses.sum(), xr)
            # running mean keeps identical samples bit-identical
            mean = g if mean is None else mean + (g - mean) / (k + 1)
        return mean, losses.detach()


def bpda_gradient(classifier, images, labels, defense, seed=0):
    return eot_gradient(classifier, images, labels, defense, samples=1, seed=seed)


def eot_gradient(classifier, images, labels, defense, samples=10, seed=0):
    single = np.asarray(images).ndim == 3
    target = DefendedTarget(classifier, defense, eot_samples=samples, seed=seed)
    x = to_tensor(np.asarray(images, dtype=np.float64), torch.float64)
    y = torch.as_tensor(np.atleast_1d(labels), dtype=torch.long)
    g, loss = target.loss_gradient(x, y)
    g = to_numpy(g)
    loss = loss.to(torch.float64).numpy()
    return LossGradient(g[0] if single else g, float(loss[0]) if single else loss)
