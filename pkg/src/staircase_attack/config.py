"""
Experiment configuration in a flat ``key = value`` text format.

Lines starting with ``#`` are comments. Nested records use dotted keys and
list entries are numbered from 1::

    seed = 0
    samples = 500
    dataset.kind = synthetic
    substitute.1.arch = mlp
    victim.arch = convnet
    attack.1.name = I-FGSM
    attack.1.K = 1
    attack.2.name = I-FGS2M
    attack.2.K = 64
    sweep.K = 1,2,4,8,16,32,64,128,256
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .attacks import AttackConfig, Composers
from .staircase import StaircaseConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    kind: str = "synthetic"
    classes: int = 10
    per_class: int = 200
    side: int = 16
    seed: int = 0
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


@dataclass
class ModelSpec:
    arch: str = "mlp"
    epochs: int = 5
    lr: float = 0.05
    seed: int = 0
    batch_size: int = 32


@dataclass
class AttackSpec:
    name: str
    config: AttackConfig


@dataclass
class ExperimentConfig:
    seed: int = 0
    samples: int = 500
    output: str = "results"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    substitutes: list = field(default_factory=lambda: [ModelSpec("mlp", seed=1)])
    victim: ModelSpec = field(default_factory=lambda: ModelSpec("convnet", seed=2))
    attacks: list = field(default_factory=list)
    sweep_k: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64, 128, 256])
    sweep_attack: str | None = None

    def validate(self):
        if not self.substitutes:
            raise ConfigError("need at least one substitute model")
        if self.victim is None:
            raise ConfigError("need exactly one victim model")
        names = [a.name for a in self.attacks]
        if len(set(names)) != len(names):
            raise ConfigError("attack names must be unique")
        if self.samples < 0:
            raise ConfigError("samples must be >= 0")
        if self.sweep_attack is not None and self.sweep_attack not in names:
            raise ConfigError(f"sweep.attack {self.sweep_attack!r} is not in the attack grid")
        return self

    def attack(self, name):
        for spec in self.attacks:
            if spec.name == name:
                return spec
        raise ConfigError(f"no attack named {name!r}")

    def derived_seed(self, *parts):
        """Mix the top-level seed with component tags into a 32-bit seed."""
        return int(np.random.SeedSequence((self.seed,) + tuple(parts)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# value coercion


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _coerce(text, kind, key):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is bool:
            return _bool(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_DATASET_TYPES = {"kind": str, "classes": int, "per_class": int, "side": int, "seed": int,
                  "images": str, "labels": str, "test_images": str, "test_labels": str}
_MODEL_TYPES = {"arch": str, "epochs": int, "lr": float, "seed": int, "batch_size": int}
_ATTACK_TYPES = {"name": str, "K": int, "epsilon_255": float, "T": int, "targeted": bool,
                 "mu": float, "di_p": float, "ti_len": int, "si_m": int, "seed": int}


def _attack_from(fields_, key):
    if "name" not in fields_:
        raise ConfigError(f"{key} has no name")
    try:
        composers = Composers(fields_.get("mu"), fields_.get("di_p"), fields_.get("ti_len"), fields_.get("si_m"))
        cfg = AttackConfig(
            epsilon_255=fields_.get("epsilon_255", 16.0),
            iterations=fields_.get("T", 10),
            staircase=StaircaseConfig(fields_.get("K", 64)),
            targeted=fields_.get("targeted", False),
            composers=composers,
            seed=fields_.get("seed", 0),
        )
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return AttackSpec(fields_["name"], cfg)


def _numbered(groups, what):
    out = []
    for idx in sorted(groups):
        out.append(groups[idx])
    if sorted(groups) != list(range(1, len(groups) + 1)):
        raise ConfigError(f"{what} entries must be numbered 1..n without gaps")
    return out


def parse_config(text):
    top = {}
    dataset = {}
    victim = {}
    subs, attacks = {}, {}
    sweep = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        parts = key.split(".")
        head = parts[0]
        if len(parts) == 1 and head in ("seed", "samples"):
            top[head] = _coerce(value, int, key)
        elif len(parts) == 1 and head == "output":
            top[head] = value
        elif head == "dataset" and len(parts) == 2 and parts[1] in _DATASET_TYPES:
            dataset[parts[1]] = _coerce(value, _DATASET_TYPES[parts[1]], key)
        elif head == "victim" and len(parts) == 2 and parts[1] in _MODEL_TYPES:
            victim[parts[1]] = _coerce(value, _MODEL_TYPES[parts[1]], key)
        elif head == "substitute" and len(parts) == 3 and parts[2] in _MODEL_TYPES:
            idx = _coerce(parts[1], int, key)
            subs.setdefault(idx, {})[parts[2]] = _coerce(value, _MODEL_TYPES[parts[2]], key)
        elif head == "attack" and len(parts) == 3 and parts[2] in _ATTACK_TYPES:
            idx = _coerce(parts[1], int, key)
            attacks.setdefault(idx, {})[parts[2]] = _coerce(value, _ATTACK_TYPES[parts[2]], key)
        elif key == "sweep.K":
            sweep["K"] = [_coerce(v.strip(), int, key) for v in value.split(",") if v.strip()]
        elif key == "sweep.attack":
            sweep["attack"] = value
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")

    cfg = ExperimentConfig(**top)
    cfg.dataset = DatasetSpec(**dataset)
    if subs:
        cfg.substitutes = [ModelSpec(**f) for f in _numbered(subs, "substitute")]
    if victim:
        cfg.victim = ModelSpec(**{**{"arch": "convnet", "seed": 2}, **victim})
    cfg.attacks = [_attack_from(f, f"attack.{i + 1}") for i, f in enumerate(_numbered(attacks, "attack"))]
    if "K" in sweep:
        cfg.sweep_k = sweep["K"]
    cfg.sweep_attack = sweep.get("attack")
    return cfg.validate()


def load_config(path):
    try:
        with open(path, encoding="utf-8") as f:
            return parse_config(f.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def serialize_config(cfg):
    lines = [f"seed = {cfg.seed}", f"samples = {cfg.samples}", f"output = {cfg.output}"]
    for f in fields(DatasetSpec):
        value = getattr(cfg.dataset, f.name)
        if value is not None:
            lines.append(f"dataset.{f.name} = {_fmt(value)}")
    for i, spec in enumerate(cfg.substitutes, 1):
        for f in fields(ModelSpec):
            lines.append(f"substitute.{i}.{f.name} = {_fmt(getattr(spec, f.name))}")
    for f in fields(ModelSpec):
        lines.append(f"victim.{f.name} = {_fmt(getattr(cfg.victim, f.name))}")
    for i, spec in enumerate(cfg.attacks, 1):
        a, c = spec.config, spec.config.composers
        values = {"name": spec.name, "K": a.K, "epsilon_255": float(a.epsilon_255), "T": a.iterations,
                  "targeted": a.targeted, "mu": c.momentum_mu, "di_p": c.di_probability,
                  "ti_len": c.ti_kernel_len, "si_m": c.si_copies, "seed": a.seed}
        for key, value in values.items():
            if value is not None:
                lines.append(f"attack.{i}.{key} = {_fmt(value)}")
    lines.append("sweep.K = " + ",".join(str(k) for k in cfg.sweep_k))
    if cfg.sweep_attack is not None:
        lines.append(f"sweep.attack = {cfg.sweep_attack}")
    return "\n".join(lines) + "\n"


def with_seed(cfg, seed):
    return replace(cfg, seed=int(seed))
