"""RunConfig-driven workflows behind the CLI subcommands.

Models are cached under ``<out>/models`` keyed by dataset, architecture and
seed, so repeated invocations reuse the same trained weights.
"""

import csv
import hashlib
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import imaging
from .attacks import batched
from .classifier import Classifier, ClassifierSpec, TrainConfig, build, train
from .config import derive_seed
from .data import load_dataset, select_correct_subset
from .defense import Defense
from .errors import ConfigError
from .protocols import advtrain as advtrain_mod
from .protocols import (
    cam,
    cam_agreement,
    common_correct_subset,
    cross_model_transfer,
    generate,
    graybox_eval,
    hyperparam_sweep,
    manifold_probe,
    spectrum_report,
    whitebox_eval,
)
from .protocols.probe import ProbeConfig
from .records import new_record, save_record
from .sr import SRNet, SRNetSpec, SRTrainConfig, make_sr_pairs, train_sr

log = logging.getLogger("srdefense")

INTERP_COLUMNS = (("tiny-edsr", "US"), ("bicubic", "US"), ("bicubic", "US_DS"), ("bicubic", "DS_US"))


def _seed_torch(seed):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def _settings_tag(section):
    """Short hash of a training section (checkpoint path excluded) for cache file names."""
    body = {k: v for k, v in asdict(section).items() if k != "checkpoint"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:8]


def out_dir(cfg, *parts):
    path = Path(cfg.out, *parts)
    path.mkdir(parents=True, exist_ok=True)
    return path


def datasets(cfg):
    cache = cfg.dataset.cache_dir or None
    return load_dataset(cfg.dataset.name, "train", cache), load_dataset(cfg.dataset.name, "test", cache)


def classifier_path(cfg, arch=None):
    arch = arch or cfg.model.arch
    if cfg.model.checkpoint and arch == cfg.model.arch:
        return Path(cfg.model.checkpoint)
    return out_dir(cfg, "models") / f"{cfg.dataset.name}-{arch}-{_settings_tag(cfg.model)}-s{cfg.seed}.ckpt"


def get_classifier(cfg, arch=None, train_set=None, test_set=None, path=None):
    """Load the cached classifier or train (and cache) it."""
    arch = arch or cfg.model.arch
    path = Path(path) if path else classifier_path(cfg, arch)
    if path.exists():
        return Classifier.load(path)
    if train_set is None:
        train_set, test_set = datasets(cfg)
    seed = derive_seed(cfg.seed, "model", arch)
    _seed_torch(seed)
    spec = ClassifierSpec.from_name(arch, in_channels=train_set.images.shape[-1], num_classes=train_set.num_classes)
    tc = TrainConfig(
        epochs=cfg.model.epochs, batch_size=cfg.model.batch_size, lr=cfg.model.lr,
        augment=cfg.model.augment, upscale_prob=cfg.model.upscale_prob, seed=seed,
    )
    clf = train(build(spec, seed), train_set, tc, eval_set=test_set, log=lambda e: log.info("train %s %s", arch, e))
    clf.save(path)
    log.info("saved classifier to %s", path)
    return clf


def sr_path(cfg, scale):
    if cfg.sr.checkpoint and scale == cfg.sr.scale:
        return Path(cfg.sr.checkpoint)
    return out_dir(cfg, "models") / f"{cfg.dataset.name}-sr-x{scale}-{_settings_tag(cfg.sr)}-s{cfg.seed}.ckpt"


def get_sr_net(cfg, scale=None, train_set=None):
    """Load the cached x-scale SR network or train (and cache) it on clean training images."""
    scale = scale or cfg.sr.scale
    path = sr_path(cfg, scale)
    if path.exists():
        return SRNet.load(path)
    if train_set is None:
        train_set, _ = datasets(cfg)
    images = train_set.images
    n_val = min(cfg.sr.val_size, len(images) // 10)
    val_hr, fit_hr = images[:n_val], images[n_val:]
    if cfg.sr.train_size:
        fit_hr = fit_hr[: cfg.sr.train_size]
    hr = _crop_to_multiple(fit_hr, scale)
    lr, hr = make_sr_pairs(hr, scale)
    val = make_sr_pairs(_crop_to_multiple(val_hr, scale), scale) if n_val else None
    seed = derive_seed(cfg.seed, "sr", scale)
    _seed_torch(seed)
    spec = SRNetSpec(blocks=cfg.sr.blocks, features=cfg.sr.features, scale=scale, channels=images.shape[-1])
    tc = SRTrainConfig(epochs=cfg.sr.epochs, batch_size=cfg.sr.batch_size, lr=cfg.sr.lr, seed=seed)
    net = train_sr(spec, lr, hr, tc, val=val, log=lambda e: log.info("train-sr x%d %s", scale, e))
    net.metadata["corpus"] = f"{train_set.name}/{train_set.split}"
    net.save(path)
    log.info("saved SR network to %s", path)
    return net


def _crop_to_multiple(images, scale):
    h, w = images.shape[1:3]
    return images[:, : h - h % scale, : w - w % scale]


def make_defense(cfg, stages=None, scale=None, sigma=None, method=None, strategy=None, train_set=None):
    dcfg = cfg.defense_config(stages, scale, sigma, method, strategy)
    net = None
    if dcfg.upscale and dcfg.sr_method == "tiny-edsr" and dcfg.scale > 1:
        net = get_sr_net(cfg, dcfg.scale, train_set)
    return Defense(dcfg, net)


def eval_subset(cfg, clf, test_set):
    return select_correct_subset(clf, test_set, cfg.dataset.subset, seed=cfg.seed)


def _record(cfg, command, clf_fingerprint, attacks, defense, tables, extra=None):
    record = new_record(command, clf_fingerprint, cfg.seed, [a.to_dict() for a in attacks], defense, tables, cfg.to_dict(), extra)
    path = save_record(record, out_dir(cfg, "records") / f"{record.run_id}.json")
    log.info("wrote %s", path)
    return record, path


def run_train(cfg, arch=None):
    train_set, test_set = datasets(cfg)
    clf = get_classifier(cfg, arch, train_set, test_set)
    return clf, classifier_path(cfg, arch)


def run_train_sr(cfg, scale=None):
    train_set, _ = datasets(cfg)
    net = get_sr_net(cfg, scale, train_set)
    return net, sr_path(cfg, scale or cfg.sr.scale)


def run_evaluate(cfg, whitebox=False, interp=False):
    """Gray-box table over ``defense.columns`` (plus optional white-box and interpolation tables)."""
    train_set, test_set = datasets(cfg)
    clf = get_classifier(cfg, train_set=train_set, test_set=test_set)
    subset = eval_subset(cfg, clf, test_set)
    attacks = cfg.attack_specs()
    defenses = {stage: make_defense(cfg, stages=stage, train_set=train_set) for stage in cfg.defense.columns}
    adversarial = generate(clf, attacks, subset)
    tables = {"graybox": graybox_eval(clf, attacks, defenses, subset, cfg.seed, adversarial=adversarial)}
    if interp:
        cols = {f"{m}-{s}": make_defense(cfg, "sr_only", method=m, strategy=s, train_set=train_set) for m, s in INTERP_COLUMNS}
        tables["interpolation"] = graybox_eval(clf, attacks, cols, subset, cfg.seed, adversarial=adversarial)
    if whitebox:
        tables["whitebox"] = whitebox_eval(
            clf, make_defense(cfg, train_set=train_set), cfg.whitebox.attacks, cfg.whitebox.epsilons, subset,
            cfg.whitebox.eot_samples, cfg.seed,
        )
    defense = {name: d.cfg.to_dict() for name, d in defenses.items()}
    return _record(cfg, "evaluate", clf.fingerprint(), attacks, defense, tables, {"clean_accuracy": clf.metadata.get("test_accuracy")})


def run_sweep(cfg):
    train_set, test_set = datasets(cfg)
    clf = get_classifier(cfg, train_set=train_set, test_set=test_set)
    subset = eval_subset(cfg, clf, test_set)
    attacks = cfg.attack_specs()
    table = hyperparam_sweep(
        clf, subset, attacks, cfg.sweep.scales, cfg.sweep.sigmas,
        lambda s, g: make_defense(cfg, scale=s, sigma=g, train_set=train_set), cfg.seed,
    )
    return _record(cfg, "sweep", clf.fingerprint(), attacks, cfg.defense_config().to_dict(), {"sweep": table})


def run_attack(cfg, label, count=None, out=None):
    """Attack the first ``count`` correctly classified images; PNGs plus manifest.csv."""
    _, test_set = datasets(cfg)
    clf = get_classifier(cfg, test_set=test_set)
    subset = select_correct_subset(clf, test_set, count or cfg.dataset.subset, seed=cfg.seed)
    spec = cfg.attack_spec(label)
    res = batched(spec.kind, clf, subset.images, subset.labels, spec.config)
    target = Path(out) if out else out_dir(cfg, "attacks", label)
    target.mkdir(parents=True, exist_ok=True)
    with open(target / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "file", "label", "success", "linf", "l2"])
        for i, img in enumerate(res.adversarial):
            name = f"{i:05d}.png"
            imaging.write_png(target / name, img)
            writer.writerow([i, name, int(subset.labels[i]), int(res.success[i]), repr(float(res.linf[i])), repr(float(res.l2[i]))])
    return res, target


STAGE_ALIASES = {"wd": "wd_only", "sr": "sr_only", "wd_sr": "wd_sr", "none": "none"}


def run_defend(cfg, input_dir, output_dir, stage="wd_sr"):
    """Defend every PNG in ``input_dir``; writes PNGs plus manifest.csv to ``output_dir``."""
    stages = STAGE_ALIASES.get(stage, stage)
    defense = make_defense(cfg, stages=stages)
    files = sorted(Path(input_dir).glob("*.png"))
    if not files:
        raise ConfigError(f"no PNG files in {input_dir}")
    target = Path(output_dir)
    target.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(derive_seed(cfg.seed, "defend"))
    with open(target / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "stage", "in_height", "in_width", "out_height", "out_width"])
        for path in files:
            img = imaging.read_png(path)
            out = defense(img, rng=rng)
            imaging.write_png(target / path.name, out)
            writer.writerow([path.name, stages, *img.shape[:2], *out.shape[:2]])
    return target


def _attacked_triple(cfg, label, count, train_set=None, test_set=None):
    if test_set is None:
        train_set, test_set = datasets(cfg)
    clf = get_classifier(cfg, train_set=train_set, test_set=test_set)
    subset = select_correct_subset(clf, test_set, count, seed=cfg.seed)
    spec = cfg.attack_spec(label)
    adv = batched(spec.kind, clf, subset.images, subset.labels, spec.config).adversarial
    defense = make_defense(cfg, train_set=train_set)
    defended = defense(adv, rng=np.random.default_rng(derive_seed(cfg.seed, "defense", label)))
    return clf, subset, adv, defended


def run_spectrum(cfg):
    clf, subset, adv, defended = _attacked_triple(cfg, cfg.spectrum.attack, cfg.spectrum.count)
    target = out_dir(cfg, "spectrum")
    report = spectrum_report(subset.images, adv, defended, out_dir=target)
    return report, target


def run_cam(cfg):
    clf, subset, adv, defended = _attacked_triple(cfg, cfg.cam.attack, cfg.cam.count)
    target = out_dir(cfg, "cam")
    stats = cam_agreement(clf, subset.images, adv, defended)
    for i in range(min(8, len(subset))):
        for name, img in (("clean", subset.images[i]), ("adversarial", adv[i]), ("defended", defended[i])):
            imaging.write_png(target / f"{i:04d}_{name}_cam.png", cam(clf, img)[..., None])
    return stats, target


def probe_pairs(cfg, clf, subset_pool, labels_pool):
    """Clean/adversarial pairs with the configured attacks in equal shares."""
    n = len(subset_pool)
    kinds = cfg.probe.attacks
    share = np.arange(n) % len(kinds)
    adv = np.empty_like(subset_pool)
    for k, label in enumerate(kinds):
        idx = np.flatnonzero(share == k)
        if len(idx):
            spec = cfg.attack_spec(label)
            adv[idx] = batched(spec.kind, clf, subset_pool[idx], labels_pool[idx], spec.config).adversarial
    return adv


def run_probe(cfg):
    train_set, test_set = datasets(cfg)
    clf = get_classifier(cfg, train_set=train_set, test_set=test_set)
    pool = select_correct_subset(clf, test_set, cfg.probe.pairs, seed=cfg.seed)
    adv = probe_pairs(cfg, clf, pool.images, pool.labels)
    defense = make_defense(cfg, train_set=train_set)
    defended = defense(adv, rng=np.random.default_rng(derive_seed(cfg.seed, "probe-defense")))
    pc = ProbeConfig(epochs=cfg.probe.epochs, lr=cfg.probe.lr, dropout=cfg.probe.dropout, test_fraction=cfg.probe.test_fraction, seed=derive_seed(cfg.seed, "probe"))
    report = manifold_probe(clf, pool.images, adv, defended, pc)
    target = out_dir(cfg, "probe")
    np.savetxt(target / "projection.csv", np.column_stack([report.projection_groups, report.projection]), delimiter=",", header="group,pc1,pc2,pc3", comments="")
    return report, target


def run_advtrain(cfg):
    train_set, test_set = datasets(cfg)
    a = cfg.advtrain
    eval_set = test_set.subset(np.arange(min(a.eval_size, len(test_set))))
    attacks = advtrain_mod.robustness_attacks(a.epsilons, a.cw_c, a.attacks, cfg.seed, a.cw_steps)
    spec = ClassifierSpec.from_name(a.arch, in_channels=train_set.images.shape[-1], num_classes=train_set.num_classes)
    sr_net = get_sr_net(cfg, cfg.sr.scale, train_set) if "robust" in a.modes else None
    columns, models = [], {}
    for mode in a.modes:
        seed = derive_seed(cfg.seed, "advtrain", a.arch)
        _seed_torch(seed)
        # no upscaled batches here: only the robust mode should see SR-sized input
        tc = TrainConfig(epochs=a.epochs, batch_size=cfg.model.batch_size, lr=cfg.model.lr, augment=cfg.model.augment, upscale_prob=0.0, seed=seed)
        clf, table = advtrain_mod.adversarial_training(
            spec, train_set, eval_set, mode, tc, attacks, a.eps_low, a.eps_high, sr_net,
            log=lambda e, m=mode: log.info("advtrain %s %s", m, e),
        )
        clf.save(out_dir(cfg, "models") / f"{cfg.dataset.name}-{a.arch}-{mode}-{_settings_tag(a)}-s{cfg.seed}.ckpt")
        columns.append(table)
        models[mode] = clf.fingerprint()
    table = advtrain_mod.merge_columns(columns)
    return _record(cfg, "advtrain", ",".join(models.values()), attacks, {}, {"advtrain": table}, {"models": models})


def run_transfer(cfg):
    train_set, test_set = datasets(cfg)
    paths = list(cfg.transfer.checkpoints) or [None] * len(cfg.transfer.archs)
    models = {arch: get_classifier(cfg, arch, train_set, test_set, path) for arch, path in zip(cfg.transfer.archs, paths)}
    subset = common_correct_subset(models, test_set, cfg.dataset.subset)
    defense = make_defense(cfg, train_set=train_set)
    table = cross_model_transfer(models, defense, subset, cfg.transfer.epsilon, cfg.seed)
    return _record(cfg, "transfer", ",".join(m.fingerprint() for m in models.values()), [], defense.cfg.to_dict(), {"transfer": table})

