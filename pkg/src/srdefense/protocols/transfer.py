"""Cross-model (black-box transfer) PGD evaluation."""

from dataclasses import replace

import numpy as np

from ..attacks import AttackConfig, batched
from ..config import derive_seed
from ..errors import ConfigError, SizeError
from .graybox import defended_labels
from .tables import EvalTable, destruction_rate


def common_correct_subset(models, dataset, n):
    """First ``n`` images that every model classifies correctly."""
    ok = np.ones(len(dataset), dtype=bool)
    for clf in models.values():
        ok &= clf.predict(dataset.images) == dataset.labels
    index = np.flatnonzero(ok)
    if n <= 0 or len(index) < n:
        raise SizeError(f"{len(index)} images correct under all models, {n} requested")
    return dataset.subset(index[:n], split=f"{dataset.split}-common")


def cross_model_transfer(models, defense, subset, epsilon=8 / 255, seed=0, base=None, batch_size=100):
    """PGD crafted on each source, defended, classified by each other target.

    Rows are sources and columns targets; the diagonal is omitted from the
    cells and its same-model gray-box accuracy kept in ``metadata["same_model"]``.
    """
    if len(models) < 2:
        raise ConfigError("cross-model transfer needs at least two classifiers")
    base = base or AttackConfig()
    names = list(models)
    table = EvalTable.empty(names, names, {
        "fingerprints": {n: m.fingerprint() for n, m in models.items()},
        "subset_size": len(subset),
        "subset_digest": subset.digest(),
        "seed": int(seed),
        "epsilon": float(epsilon),
        "same_model": {},
    })
    for src in names:
        cfg = replace(base, epsilon=epsilon, seed=derive_seed(seed, "transfer", src))
        adv = batched("pgd", models[src], subset.images, subset.labels, cfg, batch_size).adversarial
        for dst in names:
            preds = defended_labels(models[dst], adv, defense, derive_seed(seed, "defense", src, dst), batch_size)
            acc = destruction_rate(preds, subset.labels)
            if src == dst:
                table.metadata["same_model"][src] = acc
            else:
                table.set(src, dst, acc)
    return table
