"""Untargeted gradient attacks.

Every attack takes a *target* exposing

* ``forward(x)`` -> logits for an NCHW tensor (differentiable), and
* ``loss_gradient(x, y)`` -> (d summed-CE / dx, per-sample losses),

which :class:`srdefense.classifier.Classifier` and the white-box adapters in
:mod:`srdefense.defense` both provide. Images go in and come out as numpy
arrays shaped (H, W, C) or (N, H, W, C) in [0, 1].
"""

from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F

from .classifier import to_numpy, to_tensor
from .errors import ConfigError

ITERATIVE_VARIANTS = ("I", "MI", "DI2", "MDI2")
KINDS = ("fgsm", "ifgsm", "mifgsm", "di2fgsm", "mdi2fgsm", "pgd", "deepfool", "cw")


@dataclass
class AttackConfig:
    epsilon: float = 8 / 255
    alpha: float = None  # per-step size; None -> epsilon / iterations (pgd: epsilon / 4)
    iterations: int = 10
    momentum: float = 1.0
    diversity_prob: float = 0.5
    resize_low: float = 0.85
    random_start: bool = True  # pgd only
    cw_c: float = 0.1
    cw_margin: float = 0.0
    cw_lr: float = 0.01
    cw_steps: int = 1000
    overshoot: float = 0.02
    deepfool_max_iter: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.momentum < 0:
            raise ConfigError("momentum must be >= 0")
        if not 0 <= self.diversity_prob <= 1:
            raise ConfigError("diversity probability must lie in [0, 1]")

    def step_size(self, default_divisor=None):
        if self.alpha is not None:
            return self.alpha
        return self.epsilon / (default_divisor or self.iterations)

    def to_dict(self):
        return asdict(self)


@dataclass
class AttackResult:
    adversarial: np.ndarray
    success: np.ndarray  # predicted label differs from the reference label
    linf: np.ndarray
    l2: np.ndarray
    iterations: np.ndarray


def _prepare(x, y):
    single = np.asarray(x).ndim == 3
    xt = to_tensor(np.asarray(x, dtype=np.float64), torch.float64)
    yt = torch.as_tensor(np.atleast_1d(y), dtype=torch.long)
    if len(yt) != len(xt):
        raise ConfigError(f"{len(xt)} images but {len(yt)} labels")
    return xt, yt, single


@torch.no_grad()
def _predict(target, x, batch_size=256):
    return torch.cat([target.forward(x[i : i + batch_size]).argmax(1) for i in range(0, len(x), batch_size)])


def _result(target, x0, x_adv, y, iterations, single):
    pred = _predict(target, x_adv)
    delta = (x_adv - x0).flatten(1)
    res = AttackResult(
        adversarial=to_numpy(x_adv),
        success=(pred != y).numpy(),
        linf=delta.abs().amax(1).numpy() if delta.shape[1] else np.zeros(len(x0)),
        l2=delta.norm(dim=1).numpy(),
        iterations=np.broadcast_to(np.asarray(iterations), (len(x0),)).copy(),
    )
    if single:
        res = AttackResult(res.adversarial[0], res.success[0], res.linf[0], res.l2[0], res.iterations[0])
    return res


def _grad(target, x, y):
    g, _ = target.loss_gradient(x, y)
    return g.to(torch.float64)


def clip_eps(x, x0, eps):
    """Project onto the l-inf ball around ``x0`` and then onto the [0, 1] box."""
    return torch.clamp(torch.minimum(torch.maximum(x, x0 - eps), x0 + eps), 0.0, 1.0)


def image_rngs(seed, n):
    """One independent generator per image, derived from the run seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def resize_pad(x, out_hw, offset):
    """Nearest-resize a CHW tensor to ``out_hw`` and zero-pad it back to its size at ``offset``."""
    _, h, w = x.shape
    small = F.interpolate(x[None], size=out_hw, mode="nearest")[0]
    top, left = offset
    return F.pad(small, (left, w - out_hw[1] - left, top, h - out_hw[0] - top))


def draw_diversity(rng, hw, p, low=0.85):
    """Bernoulli(p) draw of one resize-pad transform; None means "leave untouched"."""
    if rng.random() >= p:
        return None
    h, w = hw
    scale = rng.uniform(low, 1.0)
    rh, rw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    return (rh, rw), (int(rng.integers(0, h - rh + 1)), int(rng.integers(0, w - rw + 1)))


def _diverse_grad(target, x, y, rngs, p, low):
    draws = [draw_diversity(rng, x.shape[2:], p, low) for rng in rngs]
    if all(d is None for d in draws):
        return _grad(target, x, y)
    xr = x.detach().requires_grad_(True)
    xt = torch.stack([xr[i] if d is None else resize_pad(xr[i], *d) for i, d in enumerate(draws)])
    gt = _grad(target, xt.detach(), y)
    (g,) = torch.autograd.grad(xt, xr, grad_outputs=gt)
    return g


def fgsm(target, x, y, cfg=None):
    cfg = cfg or AttackConfig()
    x0, yt, single = _prepare(x, y)
    g = _grad(target, x0, yt)
    x_adv = torch.clamp(x0 + cfg.epsilon * torch.sign(g), 0.0, 1.0)
    return _result(target, x0, x_adv, yt, 1, single)


def iterative_fgsm(target, x, y, cfg=None, variant="I"):
    """I-FGSM, MI-FGSM, DI2-FGSM or MDI2-FGSM depending on ``variant``."""
    if variant not in ITERATIVE_VARIANTS:
        raise ConfigError(f"unknown iterative variant {variant!r}")
    cfg = cfg or AttackConfig()
    x0, yt, single = _prepare(x, y)
    alpha = cfg.step_size()
    use_momentum = variant in ("MI", "MDI2")
    diverse = variant in ("DI2", "MDI2")
    rngs = image_rngs(cfg.seed, len(x0)) if diverse else None
    xm = x0.clone()
    g = torch.zeros_like(x0)
    for _ in range(cfg.iterations):
        if diverse:
            grad = _diverse_grad(target, xm, yt, rngs, cfg.diversity_prob, cfg.resize_low)
        else:
            grad = _grad(target, xm, yt)
        if use_momentum:
            norm = grad.abs().flatten(1).sum(1).view(-1, 1, 1, 1)
            normalized = torch.where(norm > 0, grad / torch.where(norm > 0, norm, 1.0), torch.zeros_like(grad))
            g = cfg.momentum * g + normalized
            direction = g
        else:
            direction = grad
        xm = clip_eps(xm + alpha * torch.sign(direction), x0, cfg.epsilon)
    return _result(target, x0, xm, yt, cfg.iterations, single)


def pgd(target, x, y, cfg=None):
    """Random start in the eps-ball, then projected sign steps (default eps/4)."""
    cfg = cfg or AttackConfig()
    x0, yt, single = _prepare(x, y)
    alpha = cfg.step_size(default_divisor=4)
    xm = x0.clone()
    if cfg.random_start and cfg.epsilon > 0:
        noise = np.stack([rng.uniform(-cfg.epsilon, cfg.epsilon, x0.shape[1:]) for rng in image_rngs(cfg.seed, len(x0))])
        xm = torch.clamp(x0 + torch.from_numpy(noise), 0.0, 1.0)
    for _ in range(cfg.iterations):
        xm = clip_eps(xm + alpha * torch.sign(_grad(target, xm, yt)), x0, cfg.epsilon)
    return _result(target, x0, xm, yt, cfg.iterations, single)


def _logit_jacobian(target, x):
    xr = x.detach().requires_grad_(True)
    z = target.forward(xr).to(torch.float64)
    rows = [torch.autograd.grad(z[:, k].sum(), xr, retain_graph=k < z.shape[1] - 1)[0] for k in range(z.shape[1])]
    return z.detach(), torch.stack(rows, 1).to(torch.float64)


def deepfool(target, x, cfg=None, y=None):
    """Multiclass DeepFool with overshoot, stopping per image at the first label flip.

    ``y`` is the reference label; when omitted the target's own prediction
    on the clean input is used. Images already misclassified w.r.t. ``y``
    are returned unchanged after zero iterations.
    """
    cfg = cfg or AttackConfig()
    single = np.asarray(x).ndim == 3
    x0 = to_tensor(np.asarray(x, dtype=np.float64), torch.float64)
    pred0 = _predict(target, x0)
    ref = pred0 if y is None else torch.as_tensor(np.atleast_1d(y), dtype=torch.long)
    r_tot = torch.zeros_like(x0)
    x_adv = x0.clone()
    iters = torch.zeros(len(x0), dtype=torch.long)
    active = pred0 == ref
    for _ in range(cfg.deepfool_max_iter):
        if not active.any():
            break
        idx = active.nonzero().flatten()
        z, jac = _logit_jacobian(target, x_adv[idx])
        k0 = ref[idx]
        z0 = z.gather(1, k0[:, None])
        j0 = jac[torch.arange(len(idx)), k0]
        w = jac - j0[:, None]
        f = z - z0
        wnorm = w.flatten(2).norm(dim=2)
        dist = f.abs() / torch.where(wnorm > 0, wnorm, torch.full_like(wnorm, np.inf))
        dist[torch.arange(len(idx)), k0] = np.inf
        best = dist.argmin(1)
        ar = torch.arange(len(idx))
        wl = w[ar, best]
        scale = f[ar, best].abs() / torch.clamp(wnorm[ar, best] ** 2, min=1e-30)
        r_tot[idx] = r_tot[idx] + scale.view(-1, 1, 1, 1) * wl
        x_adv[idx] = torch.clamp(x0[idx] + (1 + cfg.overshoot) * r_tot[idx], 0.0, 1.0)
        iters[idx] += 1
        still = _predict(target, x_adv[idx]) == k0
        active[idx] = still
    return _result(target, x0, x_adv, ref, iters.numpy(), single)


def cw_l2(target, x, y, cfg=None):
    """Carlini-Wagner L2 with a fixed constant ``c`` (no binary search).

    Minimises ``||x_adv - x||_2^2 + c * max(Z_y - max_{n != y} Z_n, -k)`` over
    ``zeta`` with ``x_adv = (tanh(zeta) + 1) / 2`` using Adam. Returns, per
    image, the smallest-distortion successful iterate, or the lowest-objective
    iterate when no step succeeds.
    """
    cfg = cfg or AttackConfig()
    x0, yt, single = _prepare(x, y)
    zeta = torch.atanh((2 * x0 - 1) * (1 - 1e-6)).requires_grad_(True)
    opt = torch.optim.Adam([zeta], lr=cfg.cw_lr)
    n = len(x0)
    onehot = None
    best_adv = ((torch.tanh(zeta) + 1) / 2).detach().clone()
    best_l2 = torch.full((n,), np.inf, dtype=torch.float64)
    best_obj = torch.full((n,), np.inf, dtype=torch.float64)
    found = torch.zeros(n, dtype=torch.bool)
    for _ in range(cfg.cw_steps + 1):
        x_adv = (torch.tanh(zeta) + 1) / 2
        z = target.forward(x_adv).to(torch.float64)
        if onehot is None:
            onehot = F.one_hot(yt, z.shape[1]).to(torch.float64)
        real = (z * onehot).sum(1)
        other = (z - 1e12 * onehot).amax(1)
        margin = torch.clamp(real - other, min=-cfg.cw_margin)
        dist = (x_adv - x0).flatten(1).pow(2).sum(1)
        obj = dist + cfg.cw_c * margin
        with torch.no_grad():
            xd = x_adv.detach()
            l2 = dist.detach().sqrt()
            success = z.argmax(1) != yt
            better = success & (l2 < best_l2)
            fallback = ~found & ~success & (obj.detach() < best_obj)
            take = better | fallback
            best_adv[take] = xd[take]
            best_l2[better] = l2[better]
            best_obj[fallback] = obj.detach()[fallback]
            found |= success
        opt.zero_grad()
        obj.sum().backward()
        opt.step()
    return _result(target, x0, best_adv, yt, cfg.cw_steps, single)


def run_attack(kind, target, x, y, cfg=None):
    """Dispatch by attack name (see ``KINDS``); ``none`` returns the clean images."""
    cfg = cfg or AttackConfig()
    if kind == "none":
        x0, yt, single = _prepare(x, y)
        return _result(target, x0, x0.clone(), yt, 0, single)
    if kind == "fgsm":
        return fgsm(target, x, y, cfg)
    if kind in ("ifgsm", "mifgsm", "di2fgsm", "mdi2fgsm"):
        variant = {"ifgsm": "I", "mifgsm": "MI", "di2fgsm": "DI2", "mdi2fgsm": "MDI2"}[kind]
        return iterative_fgsm(target, x, y, cfg, variant)
    if kind == "pgd":
        return pgd(target, x, y, cfg)
    if kind == "deepfool":
        return deepfool(target, x, cfg, y=y)
    if kind == "cw":
        return cw_l2(target, x, y, cfg)
    raise ConfigError(f"unknown attack {kind!r}")


def batched(kind, target, x, y, cfg=None, batch_size=100):
    """Run an attack over mini-batches; per-image random streams follow global image index."""
    cfg = cfg or AttackConfig()
    parts = []
    for i in range(0, len(x), batch_size):
        sub = replace(cfg, seed=int(np.random.SeedSequence([cfg.seed, i]).generate_state(1)[0]))
        parts.append(run_attack(kind, target, x[i : i + batch_size], y[i : i + batch_size], sub))
    return AttackResult(*(np.concatenate([getattr(p, f) for p in parts]) for f in AttackResult.__dataclass_fields__))
