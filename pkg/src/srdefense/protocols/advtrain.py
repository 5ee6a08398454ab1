"""Baseline, FGSM-augmented and super-resolution-augmented training."""

import torch

from ..attacks import AttackConfig
from ..classifier import TrainConfig, build, fit, to_numpy, to_tensor
from ..config import AttackSpec, derive_seed
from ..errors import ConfigError
from .graybox import generate
from .tables import EvalTable, destruction_rate

MODES = ("baseline", "advtrain", "robust")


def fgsm_hook(clf, eps_low=0.01, eps_high=0.05, sr_net=None):
    """Batch hook: clean batch, its FGSM copy (eps ~ U[low, high] per image), and optionally the SR'd copy."""

    def hook(x, y, gen):
        eps = eps_low + (eps_high - eps_low) * torch.rand(len(x), generator=gen, dtype=x.dtype)
        clf.module.eval()
        g, _ = clf.loss_gradient(x, y)
        x_adv = torch.clamp(x + eps.view(-1, 1, 1, 1) * torch.sign(g), 0.0, 1.0).detach()
        groups = [(x, y), (x_adv, y)]
        if sr_net is not None:
            groups.append((to_tensor(sr_net(to_numpy(x_adv)), x.dtype), y))
        return groups

    return hook


def robustness_attacks(epsilons=(0.01, 0.02), cw_c=(0.001, 0.01, 0.1), kinds=("fgsm", "ifgsm", "mifgsm", "pgd", "cw"), seed=0, cw_steps=1000):
    """The evaluation grid: clean row, each budgeted attack per epsilon, C&W per constant."""
    specs = [AttackSpec("none", "none", AttackConfig(seed=derive_seed(seed, "advtrain", "none")))]
    for kind in kinds:
        if kind == "cw":
            for c in cw_c:
                label = f"cw@c={c:g}"
                specs.append(AttackSpec(label, "cw", AttackConfig(cw_c=c, cw_steps=cw_steps, seed=derive_seed(seed, "advtrain", label))))
        elif kind == "deepfool":
            specs.append(AttackSpec("deepfool", "deepfool", AttackConfig(seed=derive_seed(seed, "advtrain", "deepfool"))))
        else:
            for eps in epsilons:
                label = f"{kind}@{eps:g}"
                specs.append(AttackSpec(label, kind, AttackConfig(epsilon=eps, seed=derive_seed(seed, "advtrain", label))))
    return specs


def evaluate_robustness(clf, test_set, attacks, column, batch_size=100):
    """One table column: undefended accuracy of ``clf`` under each attack (test images, not a correct subset)."""
    table = EvalTable.empty([a.label for a in attacks], [column], {
        "fingerprint": clf.fingerprint(), "subset_size": len(test_set), "subset_digest": test_set.digest(),
    })
    for label, res in generate(clf, attacks, test_set, batch_size).items():
        table.set(label, column, destruction_rate(clf.predict(res.adversarial), test_set.labels))
    return table


def adversarial_training(spec, train_set, test_set, mode, train_cfg=None, attacks=None, eps_low=0.01, eps_high=0.05, sr_net=None, log=None):
    """Train one model in ``mode`` and evaluate it; returns (classifier, one-column EvalTable)."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "robust" and sr_net is None:
        raise ConfigError("robust mode needs a trained SR network")
    train_cfg = train_cfg or TrainConfig()
    clf = build(spec, seed=train_cfg.seed)
    hook = None
    if mode != "baseline":
        hook = fgsm_hook(clf, eps_low, eps_high, sr_net if mode == "robust" else None)
    history = fit(clf, train_set.images, train_set.labels, train_cfg, batch_hook=hook, log=log)
    clf.metadata.update({"epochs": train_cfg.epochs, "seed": train_cfg.seed, "dataset": train_set.name, "mode": mode, "history": history})
    attacks = attacks or robustness_attacks(seed=train_cfg.seed)
    table = evaluate_robustness(clf, test_set, attacks, mode)
    clf.metadata["test_accuracy"] = clf.accuracy(test_set.images, test_set.labels)
    return clf, table


def merge_columns(tables):
    """Side-by-side join of one-column tables sharing rows."""
    rows = tables[0].rows
    if any(t.rows != rows for t in tables):
        raise ConfigError("tables have different rows")
    columns = [c for t in tables for c in t.columns]
    cells = [[v for t in tables for v in t.cells[i]] for i in range(len(rows))]
    meta = {"columns": {c: t.metadata for t in tables for c in t.columns}}
    return EvalTable(rows, columns, cells, meta)
