"""Gray-box and white-box accuracy tables."""

from dataclasses import replace

import numpy as np

from ..attacks import AttackConfig, batched
from ..config import AttackSpec, derive_seed
from ..defense import DefendedTarget
from ..errors import ConfigError
from .tables import EvalTable, destruction_rate


def _base_metadata(classifier, subset, seed):
    return {
        "fingerprint": classifier.fingerprint(),
        "subset_size": len(subset),
        "subset_digest": subset.digest(),
        "seed": int(seed),
    }


def defended_labels(classifier, images, defense, seed, batch_size=100):
    """Predictions on defended images; stochastic defenses draw from a seeded stream."""
    rng = np.random.default_rng(seed)
    preds = [classifier.predict(defense(images[i : i + batch_size], rng=rng)) for i in range(0, len(images), batch_size)]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def generate(classifier, attacks, subset, batch_size=100):
    """Run each attack once against the undefended classifier; label -> AttackResult."""
    return {a.label: batched(a.kind, classifier, subset.images, subset.labels, a.config, batch_size) for a in attacks}


def graybox_eval(classifier, attacks, defenses, subset, seed=0, batch_size=100, adversarial=None):
    """Accuracy of every defense on every attack's images, attacks computed once.

    ``attacks`` is a list of AttackSpec; ``defenses`` maps a column name to a
    Defense. Pass precomputed ``adversarial`` results to reuse them.
    """
    if not attacks or not defenses:
        raise ConfigError("graybox_eval needs at least one attack and one defense")
    adversarial = adversarial or generate(classifier, attacks, subset, batch_size)
    meta = _base_metadata(classifier, subset, seed)
    meta["attack_success"] = {label: float(np.mean(r.success)) for label, r in adversarial.items()}
    table = EvalTable.empty([a.label for a in attacks], list(defenses), meta)
    for name, defense in defenses.items():
        for a in attacks:
            preds = defended_labels(classifier, adversarial[a.label].adversarial, defense, derive_seed(seed, "defense", name, a.label), batch_size)
            table.set(a.label, name, destruction_rate(preds, subset.labels))
    return table


def budget_label(kind, eps):
    return f"{kind}@{eps * 255:g}/255"


def whitebox_eval(classifier, defense, kinds, epsilons, subset, eot_samples=1, seed=0, base=None, batch_size=100):
    """Gray-box vs white-box (BPDA, optionally EOT) defended accuracy per (attack, epsilon).

    Columns are ``graybox`` and ``whitebox``; rows where white-box accuracy
    exceeds gray-box are listed in ``metadata["violations"]`` (not fatal).
    """
    base = base or AttackConfig()
    rows, specs = [], []
    for kind in kinds:
        for eps in epsilons:
            label = budget_label(kind, eps)
            rows.append(label)
            specs.append(AttackSpec(label, kind, replace(base, epsilon=eps, seed=derive_seed(seed, "whitebox", label))))
    meta = _base_metadata(classifier, subset, seed)
    meta.update(eot_samples=int(eot_samples), defense=defense.cfg.to_dict())
    table = EvalTable.empty(rows, ["graybox", "whitebox"], meta)
    gray = graybox_eval(classifier, specs, {"graybox": defense}, subset, seed, batch_size)
    for spec in specs:
        table.set(spec.label, "graybox", gray.get(spec.label, "graybox"))
        target = DefendedTarget(classifier, defense, eot_samples=eot_samples, seed=derive_seed(seed, "eot", spec.label))
        res = batched(spec.kind, target, subset.images, subset.labels, spec.config, batch_size)
        preds = defended_labels(classifier, res.adversarial, defense, derive_seed(seed, "defense", "whitebox", spec.label), batch_size)
        table.set(spec.label, "whitebox", destruction_rate(preds, subset.labels))
    table.metadata["violations"] = [r for r in rows if table.get(r, "whitebox") > table.get(r, "graybox")]
    return table
