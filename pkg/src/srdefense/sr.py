"""x S super-resolution: interpolation baselines and a tiny EDSR-style network."""

from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import imaging
from .classifier import load_checkpoint, save_checkpoint, to_numpy, to_tensor
from .errors import ConfigError, ShapeError, TrainingError

SR_METHODS = ("tiny-edsr",) + imaging.METHODS


@dataclass
class SRNetSpec:
    blocks: int = 8
    features: int = 64
    scale: int = 2
    res_scale: float = 0.1
    channels: int = 3

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"SR network scale must be 2, 3 or 4, got {self.scale}")
        if self.blocks < 0 or self.features < 1:
            raise ConfigError("invalid SR network size")


class ResBlock(nn.Module):
    """conv-ReLU-conv with scaled identity skip; no normalisation."""

    def __init__(self, features, res_scale):
        super().__init__()
        self.conv1 = nn.Conv2d(features, features, 3, padding=1)
        self.conv2 = nn.Conv2d(features, features, 3, padding=1)
        self.res_scale = res_scale

    def forward(self, x):
        return x + self.res_scale * self.conv2(F.relu(self.conv1(x)))


class TinyEDSR(nn.Module):
    def __init__(self, spec):
        super().__init__()
        f = spec.features
        self.spec = spec
        self.head = nn.Conv2d(spec.channels, f, 3, padding=1)
        self.body = nn.Sequential(*[ResBlock(f, spec.res_scale) for _ in range(spec.blocks)], nn.Conv2d(f, f, 3, padding=1))
        self.upsample = nn.Sequential(nn.Conv2d(f, f * spec.scale**2, 3, padding=1), nn.PixelShuffle(spec.scale))
        self.tail = nn.Conv2d(f, spec.channels, 3, padding=1)

    def forward(self, x):
        h = self.head(x - 0.5)
        h = h + self.body(h)
        return self.tail(self.upsample(h)) + 0.5


class SRNet:
    """Trained (or untrained) super-resolution network with numpy inference."""

    def __init__(self, spec, module=None, metadata=None, seed=0):
        self.spec = spec
        if module is None:
            torch.manual_seed(seed)
            module = TinyEDSR(spec)
        self.module = module.eval()
        self.metadata = dict(metadata or {})

    @property
    def scale(self):
        return self.spec.scale

    @torch.no_grad()
    def __call__(self, images, batch_size=64):
        single = np.asarray(images).ndim == 3
        x = to_tensor(images)
        if x.shape[2] < 8 or x.shape[3] < 8:
            raise ShapeError(f"SR input {tuple(x.shape[2:])} smaller than 8x8")
        out = torch.cat([self.module(x[i : i + batch_size]) for i in range(0, len(x), batch_size)])
        out = imaging.clamp(to_numpy(out))
        return out[0] if single else out

    def save(self, path):
        save_checkpoint(path, "srnet", asdict(self.spec), self.module.state_dict(), self.metadata)

    @classmethod
    def load(cls, path):
        header, state = load_checkpoint(path, "srnet")
        net = cls(SRNetSpec(**header["spec"]), metadata=header.get("metadata"))
        net.module.load_state_dict(state)
        net.module.eval()
        return net


def make_sr_pairs(images, scale=2):
    """(LR, HR) pairs: HR are the clean images, LR their bicubic downsample by ``scale``."""
    hr = np.asarray(images, dtype=np.float64)
    if hr.shape[1] < 16 or hr.shape[2] < 16:
        raise ShapeError(f"HR images must be at least 16x16, got {hr.shape[1:3]}")
    if hr.shape[1] % scale or hr.shape[2] % scale:
        raise ShapeError(f"HR size {hr.shape[1:3]} not divisible by scale {scale}")
    lr = imaging.interp_resize(hr, Fraction(1, scale), "bicubic")
    return lr, hr


@dataclass
class SRTrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


def train_sr(spec, lr_images, hr_images, cfg=None, val=None, log=None):
    """Fit a TinyEDSR with L1 loss; returns an SRNet with held-out PSNR in metadata."""
    cfg = cfg or SRTrainConfig()
    if len(lr_images) == 0:
        raise ConfigError("empty SR corpus")
    if hr_images.shape[1] != lr_images.shape[1] * spec.scale:
        raise ConfigError("corpus scale does not match network scale")
    net = SRNet(spec, seed=cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    x_all, y_all = to_tensor(lr_images), to_tensor(hr_images)
    opt = torch.optim.Adam(net.module.parameters(), lr=cfg.lr)
    steps = max(1, cfg.epochs * -(-len(x_all) // cfg.batch_size))
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, steps)
    history = []
    for epoch in range(cfg.epochs):
        net.module.train()
        order = torch.randperm(len(x_all), generator=gen)
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            x, y = x_all[idx], y_all[idx]
            flip = torch.rand(1, generator=gen).item() < 0.5
            if flip:
                x, y = x.flip(3), y.flip(3)
            loss = F.l1_loss(net.module(x), y)
            if not torch.isfinite(loss):
                raise TrainingError(f"SR loss became {loss.item()} at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += loss.item() * len(idx)
        net.module.eval()
        entry = {"epoch": epoch + 1, "l1": total / len(x_all)}
        if val is not None:
            entry["val_psnr"] = evaluate_psnr(net, *val)
        history.append(entry)
        if log:
            log(entry)
    net.metadata.update({"epochs": cfg.epochs, "seed": cfg.seed, "history": history})
    if val is not None:
        net.metadata["val_psnr"] = evaluate_psnr(net, *val)
        net.metadata["val_psnr_bicubic"] = evaluate_psnr("bicubic", *val)
    return net


def evaluate_psnr(net_or_method, lr_images, hr_images):
    """Mean per-image PSNR of the x S reconstruction of ``lr_images`` against ``hr_images``."""
    scale = hr_images.shape[1] // lr_images.shape[1]
    out = super_resolve(net_or_method, lr_images, scale)
    return float(np.mean([imaging.psnr(h, o) for h, o in zip(hr_images, out)]))


def super_resolve(net_or_method, images, scale=2):
    """Upscale (H, W, C) or (N, H, W, C) images by ``scale``; scale 1 passes through."""
    if scale == 1:
        return imaging.clamp(np.array(images, dtype=np.float64))
    if isinstance(net_or_method, SRNet):
        if net_or_method.scale != scale:
            raise ConfigError(f"network is x{net_or_method.scale}, requested x{scale}")
        return net_or_method(images)
    if net_or_method in imaging.METHODS:
        if scale not in (2, 3, 4):
            raise ConfigError(f"unsupported scale {scale}")
        return imaging.interp_resize(images, scale, net_or_method)
    raise ConfigError(f"unknown SR method {net_or_method!r}")
