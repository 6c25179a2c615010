"""Line-oriented experiment config: [section] headers, key = value pairs.

Unknown sections and keys are hard errors (with the offending line number),
not warnings; a typo must never silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .gan_core import GanConfig
from .synthdata import DependencySpec, default_spec
from .training import TrainConfig


class ConfigError(Exception):
    pass


@dataclass
class DataConfig:
    n_labels: int = 12
    n_scenes: int = 4
    labels_per_scene: int = 3
    d: int = 16
    noise_std: float = 0.45
    anchor_prob: float = 0.9
    dependent_prob: float = 0.5
    n_instances: int = 6000
    test_fraction: float = 1 / 6

    def spec(self) -> DependencySpec:
        return default_spec(self.n_labels, self.n_scenes, self.labels_per_scene,
                            self.d, self.noise_std, self.anchor_prob,
                            self.dependent_prob)


@dataclass
class Paths:
    dataset: str = "dataset.txt"
    checkpoint: str = "generator.ckpt"
    log: str = "train_log.csv"
    report: str = "report.csv"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: Paths = field(default_factory=Paths)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])


def _int_list(s: str) -> list[int]:
    return [int(v) for v in s.replace(",", " ").split()]


# (section, key) -> (attr path, parser)
_SCHEMA = {
    ("data", "n_labels"): ("data.n_labels", int),
    ("data", "n_scenes"): ("data.n_scenes", int),
    ("data", "labels_per_scene"): ("data.labels_per_scene", int),
    ("data", "d"): ("data.d", int),
    ("data", "noise_std"): ("data.noise_std", float),
    ("data", "anchor_prob"): ("data.anchor_prob", float),
    ("data", "dependent_prob"): ("data.dependent_prob", float),
    ("data", "n_instances"): ("data.n_instances", int),
    ("data", "test_fraction"): ("data.test_fraction", float),
    ("gan", "alpha"): ("train.gan.alpha", float),
    ("gan", "gp_weight"): ("train.gan.gp_weight", float),
    ("gan", "tau_inv"): ("train.gan.tau_inv", float),
    ("gan", "tau_mode"): ("train.gan.tau_mode", str),
    ("gan", "d_proj"): ("train.gan.d_proj", int),
    ("gan", "d_hidden"): ("train.gan.d_hidden", int),
    ("gan", "n_hidden"): ("train.gan.n_hidden", int),
    ("gan", "leaky_slope"): ("train.gan.leaky_slope", float),
    ("train", "lr_g"): ("train.lr_g", float),
    ("train", "lr_d"): ("train.lr_d", float),
    ("train", "batch_size"): ("train.batch_size", int),
    ("train", "d_steps_per_g"): ("train.d_steps_per_g", int),
    ("train", "pretrain_epochs"): ("train.pretrain_epochs", int),
    ("train", "adv_epochs"): ("train.adv_epochs", int),
    ("train", "g_hidden"): ("train.g_hidden", _int_list),
    ("train", "variant"): ("train.variant", str),
    ("train", "seed"): ("train.seed", int),
    ("experiment", "seeds"): ("seeds", _int_list),
    ("paths", "dataset"): ("paths.dataset", str),
    ("paths", "checkpoint"): ("paths.checkpoint", str),
    ("paths", "log"): ("paths.log", str),
    ("paths", "report"): ("paths.report", str),
}


def _set_attr(cfg: ExperimentConfig, dotted: str, value) -> None:
    obj = cfg
    *parents, last = dotted.split(".")
    for p in parents:
        obj = getattr(obj, p)
    setattr(obj, last, value)


def parse_config(path) -> ExperimentConfig:
    cfg = ExperimentConfig()
    section = None
    with open(path) as f:
        lines = f.read().splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in {s for s, _ in _SCHEMA}:
                raise ConfigError(f"{path}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"{path}:{lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        entry = _SCHEMA.get((section, key))
        if entry is None:
            raise ConfigError(
                f"{path}:{lineno}: unknown key {key!r} in section [{section}]")
        dotted, parser = entry
        try:
            _set_attr(cfg, dotted, parser(value))
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {e}") from e
    # re-run dataclass validation on the mutated configs
    try:
        cfg.train.__post_init__()
        cfg.train.gan.__post_init__()
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e
    return cfg
