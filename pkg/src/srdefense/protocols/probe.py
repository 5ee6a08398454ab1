"""Clean-vs-adversarial binary probe on frozen classifier features, with a 3-D PCA view."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import SizeError


@dataclass
class ProbeConfig:
    hidden: int = 1024
    dropout: float = 0.5
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 128
    test_fraction: float = 0.2
    seed: int = 0


@dataclass
class ProbeReport:
    probe_accuracy: float
    defended_clean_fraction: float
    projection: np.ndarray  # (N, 3) PCA coordinates of hidden probe features
    projection_groups: np.ndarray  # 0 clean, 1 adversarial, 2 defended
    explained_variance: np.ndarray  # ratio per retained component

    def to_dict(self):
        return {
            "probe_accuracy": self.probe_accuracy,
            "defended_clean_fraction": self.defended_clean_fraction,
            "explained_variance": [float(v) for v in self.explained_variance],
            "explained_variance_total": float(np.sum(self.explained_variance)),
        }


class ProbeHead(nn.Module):
    """features -> batch norm -> dropout -> dense(hidden) -> ReLU -> dense(1)."""

    def __init__(self, dim, hidden=1024, dropout=0.5):
        super().__init__()
        self.norm = nn.BatchNorm1d(dim)
        self.drop = nn.Dropout(dropout)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def hidden(self, x):
        return F.relu(self.fc1(self.drop(self.norm(x))))

    def forward(self, x):
        return self.fc2(self.hidden(x)).squeeze(1)


def pca(features, components=3):
    """Exact PCA by SVD of the centred data; returns (coordinates, explained-variance ratios)."""
    x = np.asarray(features, dtype=np.float64)
    x = x - x.mean(0)
    _, s, vt = np.linalg.svd(x, full_matrices=False)
    var = s**2
    total = var.sum()
    ratio = var[:components] / total if total > 0 else np.zeros(min(components, len(var)))
    return x @ vt[:components].T, ratio


def train_probe(clean_features, adv_features, cfg=None):
    """Fit a ProbeHead; pairs are split by index so both members of a pair share a split.

    Returns (head, test accuracy).
    """
    cfg = cfg or ProbeConfig()
    n = len(clean_features)
    if n == 0 or len(adv_features) == 0:
        raise SizeError("probe needs both clean and adversarial examples")
    if len(adv_features) != n:
        raise SizeError(f"{n} clean but {len(adv_features)} adversarial features")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    n_test = max(1, int(round(n * cfg.test_fraction)))
    test, train = order[:n_test], order[n_test:]
    if len(train) == 0:
        raise SizeError("too few pairs to hold out a test split")

    def stack(idx):
        x = np.concatenate([clean_features[idx], adv_features[idx]])
        y = np.concatenate([np.zeros(len(idx)), np.ones(len(idx))])
        return torch.from_numpy(x).float(), torch.from_numpy(y).float()

    x_tr, y_tr = stack(train)
    x_te, y_te = stack(test)
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    head = ProbeHead(x_tr.shape[1], cfg.hidden, cfg.dropout)
    opt = torch.optim.Adam(head.parameters(), lr=cfg.lr)
    for _ in range(cfg.epochs):
        head.train()
        perm = torch.randperm(len(x_tr), generator=gen)
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            if len(idx) < 2:  # batch norm needs two samples
                continue
            loss = F.binary_cross_entropy_with_logits(head(x_tr[idx]), y_tr[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    head.eval()
    with torch.no_grad():
        acc = float(((head(x_te) > 0).float() == y_te).float().mean())
    return head, acc


def manifold_probe(classifier, clean_images, adversarial_images, defended_images, cfg=None):
    """Separability of clean vs adversarial features, and where defended images fall."""
    cfg = cfg or ProbeConfig()
    if len(defended_images) == 0:
        raise SizeError("no defended images to score")
    f_clean = classifier.pooled_features(clean_images)
    f_adv = classifier.pooled_features(adversarial_images)
    f_def = classifier.pooled_features(defended_images)
    head, acc = train_probe(f_clean, f_adv, cfg)
    with torch.no_grad():
        t_def = torch.from_numpy(f_def).float()
        clean_frac = float((head(t_def) <= 0).float().mean())
        hidden = np.concatenate([head.hidden(torch.from_numpy(f).float()).double().numpy() for f in (f_clean, f_adv, f_def)])
    groups = np.concatenate([np.full(len(f), g) for g, f in enumerate((f_clean, f_adv, f_def))])
    coords, ratio = pca(hidden, 3)
    return ProbeReport(acc, clean_frac, coords, groups, ratio)
