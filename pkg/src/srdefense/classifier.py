"""Small GAP-headed convolutional classifiers with exact input gradients."""

import copy
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, SchemaError, ShapeError, TrainingError

CHECKPOINT_MAGIC = "srdefense-checkpoint"
CHECKPOINT_VERSION = 1


def to_tensor(x, dtype=torch.float32):
    """(H, W, C) or (N, H, W, C) numpy array -> NCHW tensor."""
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"expected (N, H, W, C) images, got shape {x.shape}")
    return torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2))).to(dtype)


def to_numpy(t):
    """NCHW tensor -> (N, H, W, C) float64 array."""
    return t.detach().to(torch.float64).permute(0, 2, 3, 1).cpu().numpy()


@dataclass
class ClassifierSpec:
    arch: str = "smallcnn"  # smallcnn | resnet
    num_classes: int = 10
    in_channels: int = 3
    widths: tuple = (32, 64, 128, 128)
    depth: int = 20  # resnet only
    width_mult: int = 1  # resnet bottleneck widths 16k/32k/64k when 1
    head_hidden: int = 1024  # resnet only

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if self.arch not in ("smallcnn", "resnet"):
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.arch == "resnet" and (self.depth - 2) % 9:
            raise ConfigError(f"bottleneck resnet depth must be 9n+2, got {self.depth}")

    @property
    def name(self):
        return "smallcnn" if self.arch == "smallcnn" else f"resnet-{self.depth}"

    @classmethod
    def from_name(cls, name, **kw):
        if name == "smallcnn":
            return cls(arch="smallcnn", **kw)
        if name.startswith("resnet"):
            depth = int(name.split("-")[1]) if "-" in name else 20
            return cls(arch="resnet", depth=depth, **kw)
        raise ConfigError(f"unknown architecture {name!r}")


class SmallCNN(nn.Module):
    def __init__(self, spec):
        super().__init__()
        layers = []
        c_in = spec.in_channels
        for i, c_out in enumerate(spec.widths):
            stride = 2 if i % 2 == 1 else 1
            layers += [
                nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False),
                nn.BatchNorm2d(c_out),
                nn.ReLU(inplace=True),
            ]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(c_in, spec.num_classes)

    def feature_maps(self, x):
        return self.features(x)

    def head(self, pooled):
        return self.fc(pooled)

    def forward(self, x):
        return self.head(self.feature_maps(x).mean(dim=(2, 3)))


class Bottleneck(nn.Module):
    def __init__(self, c_in, width, stride):
        super().__init__()
        c_out = 4 * width
        self.conv1 = nn.Conv2d(c_in, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = nn.Conv2d(width, c_out, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(c_out)
        self.shortcut = nn.Identity()
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False), nn.BatchNorm2d(c_out)
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return F.relu(out + self.shortcut(x))


class BottleneckResNet(nn.Module):
    """CIFAR bottleneck ResNet: stem, three stages of (depth-2)/9 blocks, GAP, FC, FC."""

    def __init__(self, spec):
        super().__init__()
        blocks = (spec.depth - 2) // 9
        k = spec.width_mult
        self.stem = nn.Sequential(
            nn.Conv2d(spec.in_channels, 16, 3, padding=1, bias=False), nn.BatchNorm2d(16), nn.ReLU(inplace=True)
        )
        stages = []
        c_in = 16
        for i, width in enumerate((16 * k, 32 * k, 64 * k)):
            for b in range(blocks):
                stride = 2 if (i > 0 and b == 0) else 1
                stages.append(Bottleneck(c_in, width, stride))
                c_in = 4 * width
        self.stages = nn.Sequential(*stages)
        self.fc1 = nn.Linear(c_in, spec.head_hidden)
        self.fc2 = nn.Linear(spec.head_hidden, spec.num_classes)
        self.stage_widths = [16 * k, 32 * k, 64 * k]
        self.blocks_per_stage = blocks

    def feature_maps(self, x):
        return self.stages(self.stem(x))

    def head(self, pooled):
        return self.fc2(F.relu(self.fc1(pooled)))

    def forward(self, x):
        return self.head(self.feature_maps(x).mean(dim=(2, 3)))


def build(spec, seed=0):
    """Instantiate an untrained network; initial weights depend only on (spec, seed)."""
    torch.manual_seed(seed)
    module = SmallCNN(spec) if spec.arch == "smallcnn" else BottleneckResNet(spec)
    return Classifier(module, spec)


class Classifier:
    """A trained (or untrained) network plus the numpy-facing evaluation API.

    The wrapped module always runs in evaluation mode here; ``train`` flips
    it to training mode for the duration of fitting only.
    """

    def __init__(self, module, spec=None, metadata=None):
        self.module = module.eval()
        self.spec = spec
        self.metadata = dict(metadata or {})

    @property
    def dtype(self):
        return next(self.module.parameters()).dtype

    @property
    def num_classes(self):
        return self.spec.num_classes if self.spec else None

    def double(self):
        return Classifier(copy.deepcopy(self.module).double(), self.spec, self.metadata)

    # torch-level interface used by the attacks
    def forward(self, x):
        return self.module(x.to(self.dtype))

    def loss_gradient(self, x, y):
        """Gradient of summed cross-entropy w.r.t. ``x`` (NCHW tensor) and per-sample losses."""
        x = x.detach().to(self.dtype).requires_grad_(True)
        losses = F.cross_entropy(self.module(x), y, reduction="none")
        (grad,) = torch.autograd.grad(losses.sum(), x)
        return grad, losses.detach()

    # numpy-level interface
    @torch.no_grad()
    def logits(self, images, batch_size=256):
        x = to_tensor(images, self.dtype)
        out = [self.module(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        z = torch.cat(out).to(torch.float64).numpy()
        return z[0] if np.asarray(images).ndim == 3 else z

    def predict(self, images, batch_size=256):
        return np.argmax(self.logits(images, batch_size), axis=-1)

    def accuracy(self, images, labels):
        return float(np.mean(self.predict(images) == np.asarray(labels)))

    def input_gradient(self, images, labels):
        """Return (gradient, loss) with the gradient shaped like ``images``."""
        single = np.asarray(images).ndim == 3
        y = torch.as_tensor(np.atleast_1d(labels), dtype=torch.long)
        grad, loss = self.loss_gradient(to_tensor(images, self.dtype), y)
        grad = to_numpy(grad)
        loss = loss.to(torch.float64).numpy()
        return LossGradient(grad[0] if single else grad, float(loss[0]) if single else loss)

    @torch.no_grad()
    def pooled_features(self, images, batch_size=256):
        x = to_tensor(images, self.dtype)
        out = [self.module.feature_maps(x[i : i + batch_size]).mean(dim=(2, 3)) for i in range(0, len(x), batch_size)]
        return torch.cat(out).to(torch.float64).numpy()

    def parameter_count(self):
        return sum(p.numel() for p in self.module.parameters())

    def fingerprint(self):
        h = hashlib.sha256()
        for name, tensor in sorted(self.module.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        arch = self.spec.name if self.spec else type(self.module).__name__
        return f"{arch}:{h.hexdigest()[:16]}"

    def save(self, path):
        save_checkpoint(path, "classifier", asdict(self.spec), self.module.state_dict(), self.metadata)

    @classmethod
    def load(cls, path):
        header, state = load_checkpoint(path, "classifier")
        spec = ClassifierSpec(**header["spec"])
        clf = build(spec)
        clf.module.load_state_dict(state)
        clf.metadata = header.get("metadata", {})
        return clf


@dataclass
class LossGradient:
    gradient: np.ndarray
    loss: object


def save_checkpoint(path, kind, spec, state_dict, metadata=None):
    """Write ``header JSON line`` + ``torch state bytes``; the header carries a sha256 of the bytes."""
    buf = io.BytesIO()
    torch.save(state_dict, buf)
    blob = buf.getvalue()
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "spec": spec,
        "metadata": metadata or {},
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)
    tmp.replace(path)


def load_checkpoint(path, kind):
    raw = Path(path).read_bytes()
    line, _, blob = raw.partition(b"\n")
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not a checkpoint file") from exc
    if header.get("magic") != CHECKPOINT_MAGIC or header.get("version") != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint header")
    if header.get("kind") != kind:
        raise SchemaError(f"{path}: holds a {header.get('kind')} checkpoint, expected {kind}")
    if hashlib.sha256(blob).hexdigest() != header["sha256"]:
        raise SchemaError(f"{path}: content hash mismatch")
    state = torch.load(io.BytesIO(blob), weights_only=True)
    return header, state


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    augment: bool = True  # random crop (pad 4) + horizontal flip
    upscale_prob: float = 0.5  # chance a batch is bicubic-upsampled x2, so the model also reads SR-sized input
    seed: int = 0


def _augment_batch(x, gen):
    n, _, h, w = x.shape
    flip = torch.rand(n, generator=gen) < 0.5
    x = torch.where(flip[:, None, None, None], x.flip(3), x)
    padded = F.pad(x, (4, 4, 4, 4), mode="reflect")
    dy = torch.randint(0, 9, (n,), generator=gen)
    dx = torch.randint(0, 9, (n,), generator=gen)
    return torch.stack([padded[i, :, dy[i] : dy[i] + h, dx[i] : dx[i] + w] for i in range(n)])


def fit(clf, images, labels, cfg, batch_hook=None, eval_set=None, log=None):
    """Train ``clf`` in place with Nesterov SGD under a one-cycle schedule.

    ``batch_hook(x, y, gen)`` replaces each batch by a list of ``(x, y)``
    groups whose losses are pooled (adversarial training appends attacked
    and super-resolved copies this way).
    """
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    x_all = to_tensor(images, clf.dtype)
    y_all = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    opt = torch.optim.SGD(
        clf.module.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay, nesterov=True
    )
    steps_per_epoch = max(1, -(-len(x_all) // cfg.batch_size))
    sched = torch.optim.lr_scheduler.OneCycleLR(
        opt, max_lr=cfg.lr, total_steps=max(1, cfg.epochs * steps_per_epoch), pct_start=0.15
    ) if cfg.epochs > 0 else None
    history = []
    for epoch in range(cfg.epochs):
        order = torch.randperm(len(x_all), generator=gen)
        total, count, start = 0.0, 0, time.time()
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            x, y = x_all[idx], y_all[idx]
            if cfg.augment:
                x = _augment_batch(x, gen)
            if cfg.upscale_prob > 0 and torch.rand(1, generator=gen).item() < cfg.upscale_prob:
                x = F.interpolate(x, scale_factor=2, mode="bicubic", align_corners=False).clamp(0.0, 1.0)
            groups = [(x, y)] if batch_hook is None else batch_hook(x, y, gen)
            clf.module.train()
            n_batch = sum(len(gy) for _, gy in groups)
            # groups may differ in spatial size, so each gets its own forward pass
            loss = sum(F.cross_entropy(clf.module(gx), gy, reduction="sum") for gx, gy in groups) / n_batch
            if not torch.isfinite(loss):
                clf.module.eval()
                raise TrainingError(f"loss became {loss.item()} at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += loss.item() * n_batch
            count += n_batch
        clf.module.eval()
        entry = {"epoch": epoch + 1, "loss": total / count, "seconds": time.time() - start}
        if eval_set is not None:
            entry["eval_accuracy"] = clf.accuracy(*eval_set)
        history.append(entry)
        if log:
            log(entry)
    clf.module.eval()
    return history


def train(clf, train_set, cfg=None, eval_set=None, log=None):
    """Supervised training on a LabeledImageSet; returns the same classifier, trained."""
    cfg = cfg or TrainConfig()
    if clf.spec and train_set.num_classes != clf.spec.num_classes:
        raise ConfigError(
            f"dataset has {train_set.num_classes} classes, classifier expects {clf.spec.num_classes}"
        )
    evals = (eval_set.images, eval_set.labels) if eval_set is not None else None
    history = fit(clf, train_set.images, train_set.labels, cfg, eval_set=evals, log=log)
    clf.metadata.update(
        {
            "epochs": cfg.epochs,
            "seed": cfg.seed,
            "dataset": train_set.name,
            "history": history,
        }
    )
    if eval_set is not None:
        clf.metadata["test_accuracy"] = clf.accuracy(eval_set.images, eval_set.labels)
    return clf
