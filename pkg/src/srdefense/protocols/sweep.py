"""(scale, sigma) grid search for the defense."""

import itertools

import numpy as np

from ..config import derive_seed
from .graybox import defended_labels, generate
from .tables import EvalTable, destruction_rate


def sweep_label(scale, sigma):
    return f"S={scale},sigma={sigma:g}"


def hyperparam_sweep(classifier, subset, attacks, scales, sigmas, make_defense, seed=0, batch_size=100, adversarial=None):
    """One row per (scale, sigma), one column per attack; recommends the best mean row.

    ``make_defense(scale, sigma)`` builds the Defense for a grid point.
    """
    adversarial = adversarial or generate(classifier, attacks, subset, batch_size)
    grid = list(itertools.product(scales, sigmas))
    rows = [sweep_label(s, g) for s, g in grid]
    table = EvalTable.empty(rows, [a.label for a in attacks], {
        "fingerprint": classifier.fingerprint(),
        "subset_size": len(subset),
        "subset_digest": subset.digest(),
        "seed": int(seed),
    })
    for (scale, sigma), row in zip(grid, rows):
        defense = make_defense(scale, sigma)
        for a in attacks:
            preds = defended_labels(classifier, adversarial[a.label].adversarial, defense, derive_seed(seed, "sweep", row, a.label), batch_size)
            table.set(row, a.label, destruction_rate(preds, subset.labels))
    means = [float(np.mean(cells)) for cells in table.cells]
    best = int(np.argmax(means))
    table.metadata["recommended"] = {"scale": int(grid[best][0]), "sigma": float(grid[best][1]), "mean_accuracy": means[best]}
    return table
