"""Flat ``dotted.key = value`` run configuration.

One parameter per line, ``#`` starts a comment. Unknown keys are errors.
Attack instances are declared by listing labels in ``attacks`` and tuning
them with ``attack.<label>.<field>``; a label that names an attack kind
(``fgsm``, ``pgd``, ...) needs no explicit ``kind``.

Budgets (``epsilon``, ``alpha``, ``whitebox.epsilons``, ...) accept
fractions such as ``8/255``; a value >= 1 is read on the 0-255 scale.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import attacks as attack_mod
from .attacks import AttackConfig
from .defense import STAGES, DefenseConfig
from .errors import ConfigError
from .wavelet import ShrinkConfig

MAX_EPSILON = 64 / 255
ATTACK_KINDS = ("none",) + attack_mod.KINDS


def parse_number(text):
    text = str(text).strip()
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def parse_budget(text):
    """Pixel budget in [0, 1] units; values >= 1 are on the 0-255 scale."""
    value = parse_number(text)
    return value / 255 if value >= 1 else value


def parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _list(conv):
    def parse(text):
        return tuple(conv(part) for part in str(text).split(",") if part.strip())

    return parse


def _str(text):
    return str(text).strip()


def _int(text):
    value = parse_number(text)
    if value != int(value):
        raise ConfigError(f"not an integer: {text!r}")
    return int(value)


def _sigma(text):
    return "estimate" if str(text).strip() == "estimate" else parse_number(text)


@dataclass
class DatasetSection:
    name: str = "cifar10"
    split: str = "test"
    subset: int = 500
    cache_dir: str = ""


@dataclass
class ModelSection:
    arch: str = "smallcnn"
    checkpoint: str = ""
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.05
    augment: bool = True
    upscale_prob: float = 0.5


@dataclass
class SRSection:
    checkpoint: str = ""
    blocks: int = 8
    features: int = 64
    scale: int = 2
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    train_size: int = 0  # 0: whole clean training split
    val_size: int = 500


@dataclass
class DefenseSection:
    sigma: object = 0.04
    mode: str = "bayes"
    thresholding: str = "soft"
    levels: int = 2
    family: str = "db4"
    scale: int = 2
    method: str = "tiny-edsr"
    stages: str = "wd_sr"
    resize_strategy: str = "US"
    random_pad_prob: float = 0.0
    columns: tuple = ("none", "wd_only", "sr_only", "wd_sr")  # evaluate: one column per stage setting


@dataclass
class WhiteboxSection:
    attacks: tuple = ("fgsm", "ifgsm", "pgd")
    epsilons: tuple = (2 / 255, 8 / 255)
    eot_samples: int = 1


@dataclass
class ProbeSection:
    pairs: int = 2000
    attacks: tuple = ("fgsm", "ifgsm", "mifgsm", "pgd")
    epochs: int = 30
    lr: float = 1e-3
    dropout: float = 0.5
    test_fraction: float = 0.2


@dataclass
class SweepSection:
    scales: tuple = (2, 3, 4)
    sigmas: tuple = (0.03, 0.04, 0.05)


@dataclass
class AdvTrainSection:
    arch: str = "resnet-20"
    modes: tuple = ("baseline", "advtrain", "robust")
    epochs: int = 20
    eps_low: float = 0.01
    eps_high: float = 0.05
    epsilons: tuple = (0.01, 0.02)
    cw_c: tuple = (0.001, 0.01, 0.1)
    attacks: tuple = ("fgsm", "ifgsm", "mifgsm", "pgd", "cw")
    eval_size: int = 1000
    cw_steps: int = 1000


@dataclass
class TransferSection:
    archs: tuple = ("smallcnn", "resnet-20")
    checkpoints: tuple = ()
    epsilon: float = 8 / 255


@dataclass
class CamSection:
    attack: str = "ifgsm"
    count: int = 100


@dataclass
class SpectrumSection:
    attack: str = "ifgsm"
    count: int = 8


SECTIONS = {
    "dataset": DatasetSection,
    "model": ModelSection,
    "sr": SRSection,
    "defense": DefenseSection,
    "whitebox": WhiteboxSection,
    "probe": ProbeSection,
    "sweep": SweepSection,
    "advtrain": AdvTrainSection,
    "transfer": TransferSection,
    "cam": CamSection,
    "spectrum": SpectrumSection,
}

# parsers for specific keys; everything else is typed by its default
SPECIAL = {
    ("defense", "sigma"): _sigma,
    ("defense", "columns"): _list(_str),
    ("whitebox", "attacks"): _list(_str),
    ("whitebox", "epsilons"): _list(parse_budget),
    ("probe", "attacks"): _list(_str),
    ("sweep", "scales"): _list(_int),
    ("sweep", "sigmas"): _list(parse_number),
    ("advtrain", "modes"): _list(_str),
    ("advtrain", "epsilons"): _list(parse_budget),
    ("advtrain", "eps_low"): parse_budget,
    ("advtrain", "eps_high"): parse_budget,
    ("advtrain", "cw_c"): _list(parse_number),
    ("advtrain", "attacks"): _list(_str),
    ("transfer", "archs"): _list(_str),
    ("transfer", "checkpoints"): _list(_str),
    ("transfer", "epsilon"): parse_budget,
}

ATTACK_FIELDS = {f.name: f for f in fields(AttackConfig)}
BUDGET_FIELDS = ("epsilon", "alpha")


def _converter(default):
    if isinstance(default, bool):
        return parse_bool
    if isinstance(default, int):
        return _int
    if isinstance(default, float):
        return parse_number
    return _str


def _attack_value(name, text):
    if name == "kind":
        return _str(text)
    if name in BUDGET_FIELDS:
        return parse_budget(text)
    if name not in ATTACK_FIELDS:
        raise ConfigError(f"unknown attack field {name!r}")
    return _converter(ATTACK_FIELDS[name].default)(text)


@dataclass
class AttackSpec:
    label: str
    kind: str
    config: AttackConfig

    def to_dict(self):
        return {"label": self.label, "kind": self.kind, "config": self.config.to_dict()}


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    sr: SRSection = field(default_factory=SRSection)
    defense: DefenseSection = field(default_factory=DefenseSection)
    whitebox: WhiteboxSection = field(default_factory=WhiteboxSection)
    probe: ProbeSection = field(default_factory=ProbeSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    advtrain: AdvTrainSection = field(default_factory=AdvTrainSection)
    transfer: TransferSection = field(default_factory=TransferSection)
    cam: CamSection = field(default_factory=CamSection)
    spectrum: SpectrumSection = field(default_factory=SpectrumSection)
    attacks: tuple = ("none", "fgsm", "ifgsm", "mifgsm", "cw", "deepfool")
    attack_overrides: dict = field(default_factory=dict)  # label -> {field: value}
    seed: int = 0
    out: str = "runs"

    def __post_init__(self):
        self.validate()

    def validate(self):
        d = self.defense
        if d.scale not in (1, 2, 3, 4) or self.sr.scale not in (2, 3, 4):
            raise ConfigError("scale must be in {1, 2, 3, 4} (SR network: {2, 3, 4})")
        for s in self.sweep.scales:
            if s not in (1, 2, 3, 4):
                raise ConfigError(f"sweep scale {s} outside {{1, 2, 3, 4}}")
        sigmas = list(self.sweep.sigmas) + ([] if d.sigma == "estimate" else [d.sigma])
        for s in sigmas:
            if not 0 <= s <= 0.2:
                raise ConfigError(f"sigma {s} outside [0, 0.2]")
        for stage in (d.stages,) + tuple(d.columns):
            if stage not in STAGES:
                raise ConfigError(f"unknown defense stage {stage!r}")
        budgets = list(self.whitebox.epsilons) + list(self.advtrain.epsilons) + [self.transfer.epsilon]
        for spec in self.attack_specs():
            if spec.kind != "none" and spec.kind not in ("deepfool", "cw"):
                budgets.append(spec.config.epsilon)
        for eps in budgets:
            if not 0 < eps <= MAX_EPSILON + 1e-12:
                raise ConfigError(f"epsilon {eps} outside (0, 64/255]")
        used = set(self.attacks) | set(self.whitebox.attacks) | set(self.probe.attacks)
        used |= {self.cam.attack, self.spectrum.attack}
        for label in set(self.attack_overrides) - used:
            raise ConfigError(f"attack.{label}.* given but {label!r} is not used by any protocol")
        for name in ("cam", "spectrum"):
            label = getattr(self, name).attack
            if label not in self.attacks and label not in ATTACK_KINDS:
                raise ConfigError(f"{name}.attack {label!r} is neither a configured label nor an attack kind")

    def attack_spec(self, label):
        over = dict(self.attack_overrides.get(label, {}))
        kind = over.pop("kind", label)
        if kind not in ATTACK_KINDS:
            raise ConfigError(f"attack {label!r}: unknown kind {kind!r}")
        try:
            cfg = AttackConfig(**over)
        except TypeError as exc:
            raise ConfigError(f"attack {label!r}: {exc}") from exc
        return AttackSpec(label, kind, replace(cfg, seed=derive_seed(self.seed, "attack", label)))

    def attack_specs(self, labels=None):
        return [self.attack_spec(label) for label in (labels or self.attacks)]

    def shrink_config(self, sigma=None):
        d = self.defense
        return ShrinkConfig(d.mode, d.thresholding, d.sigma if sigma is None else sigma, d.levels, d.family)

    def defense_config(self, stages=None, scale=None, sigma=None, method=None, strategy=None):
        d = self.defense
        return DefenseConfig(
            shrink=self.shrink_config(sigma),
            sr_method=method or d.method,
            scale=d.scale if scale is None else scale,
            stages=stages or d.stages,
            resize_strategy=strategy or d.resize_strategy,
            random_pad_prob=d.random_pad_prob,
        )

    def to_dict(self):
        out = {name: asdict(getattr(self, name)) for name in SECTIONS}
        out.update(attacks=list(self.attacks), attack_overrides=self.attack_overrides, seed=self.seed, out=self.out)
        return json.loads(json.dumps(out))

    def digest(self):
        """Hash of everything that determines results (the output directory excluded)."""
        body = self.to_dict()
        body.pop("out")
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def derive_seed(seed, *tags):
    """Independent 32-bit seed for a named stage of a run."""
    words = [int(seed)] + [int.from_bytes(hashlib.sha256(str(t).encode()).digest()[:4], "little") for t in tags]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def parse_config(text, base=None):
    """Parse config text into a RunConfig (``base`` supplies defaults)."""
    sections = {name: asdict(getattr(base, name)) if base else {} for name in SECTIONS}
    top = {}
    overrides = {k: dict(v) for k, v in (base.attack_overrides.items() if base else ())}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        parts = key.split(".")
        try:
            if len(parts) == 1:
                if key == "attacks":
                    top[key] = _list(_str)(value)
                elif key == "seed":
                    top[key] = _int(value)
                elif key == "out":
                    top[key] = value
                else:
                    raise ConfigError(f"unknown key {key!r}")
            elif parts[0] == "attack" and len(parts) == 3:
                overrides.setdefault(parts[1], {})[parts[2]] = _attack_value(parts[2], value)
            elif len(parts) == 2 and parts[0] in SECTIONS:
                section, name = parts
                known = {f.name: f for f in fields(SECTIONS[section])}
                if name not in known:
                    raise ConfigError(f"unknown key {key!r}")
                conv = SPECIAL.get((section, name)) or _converter(known[name].default)
                sections[section][name] = conv(value)
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    kwargs = {name: SECTIONS[name](**values) for name, values in sections.items()}
    if base:
        top = {"attacks": base.attacks, "seed": base.seed, "out": base.out, **top}
    return RunConfig(**kwargs, **top, attack_overrides=overrides)


def load_config(path=None, seed=None, out=None):
    """Read a config file (or defaults when ``path`` is None) and apply CLI overrides."""
    cfg = parse_config(Path(path).read_text()) if path else RunConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out is not None:
        cfg = replace(cfg, out=str(out))
    return cfg


def dump_config(cfg):
    """Render a RunConfig back to config text (round-trips through parse_config)."""
    lines = []
    for section in SECTIONS:
        for name, value in asdict(getattr(cfg, section)).items():
            lines.append(f"{section}.{name} = {_render(value)}")
    lines.append(f"attacks = {_render(cfg.attacks)}")
    for label, over in sorted(cfg.attack_overrides.items()):
        for name, value in sorted(over.items()):
            lines.append(f"attack.{label}.{name} = {_render(value)}")
    lines += [f"seed = {cfg.seed}", f"out = {cfg.out}"]
    return "\n".join(lines) + "\n"


def _render(value):
    if isinstance(value, (tuple, list)):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
