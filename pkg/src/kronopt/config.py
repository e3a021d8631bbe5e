"""Experiment configuration: flat ``key = value`` files with dotted section
prefixes for the dataset/network sections, plus ``--set key=value`` overrides.

Documented keys
---------------
optimizer section (bare keys):
    optimizer, gamma, zeta, epsilon_norm, inversion_period, lr, momentum,
    damping, switch_ratio, window, half_precision_comm, workers, seed
run section (bare keys):
    loss, batch, iterations, rank1_every
scheduler section (bare keys):
    scheduler (none|knee|step), beta, decay_factor, milestones, epoch_iters
net section:
    net.dims (comma list), net.activation, net.bias
dataset section:
    dataset.kind (xor|gaussian-blobs|random-autoencoder|idx),
    dataset.n, dataset.dim, dataset.classes, dataset.scale, dataset.sigma,
    dataset.rank, dataset.offset, dataset.noise,
    dataset.images, dataset.labels (IDX paths)
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

from .net import ACTIVATIONS, LOSSES, LayerSpec
from .sched import DEFAULT_MILESTONES

TRAINABLE_OPTIMIZERS = ("mkor", "mkor-h", "kfac", "sngd", "sgd")
SCHEDULERS = ("none", "knee", "step")


class ConfigError(Exception):
    """Invalid or missing configuration; maps to CLI exit code 2."""


@dataclass
class ExperimentConfig:
    # optimizer
    optimizer: str = "mkor"
    gamma: float = 0.9
    zeta: float = 0.95
    epsilon_norm: float = 100.0
    inversion_period: int = 10
    lr: float = 0.1
    momentum: float = 0.9
    damping: float = 1e-3
    switch_ratio: float = 0.1
    window: int = 50
    half_precision_comm: bool = False
    workers: int = 1
    seed: int | None = None
    # run
    loss: str = "mse"
    batch: int = 32
    iterations: int = 100
    rank1_every: int = 0
    # scheduler
    scheduler: str = "none"
    beta: float = 0.2
    decay_factor: float = 0.5
    milestones: tuple = DEFAULT_MILESTONES
    epoch_iters: int = 0  # 0 = derive from shard size
    # net
    net_dims: tuple = (2, 8, 1)
    net_activation: str = "tanh"
    net_bias: bool = True
    # dataset
    dataset_kind: str = "xor"
    dataset_n: int = 4
    dataset_params: dict = field(default_factory=dict)
    dataset_images: str = ""
    dataset_labels: str = ""

    def layer_specs(self) -> list[LayerSpec]:
        dims = self.net_dims
        specs = []
        for i in range(len(dims) - 1):
            # hidden layers use the configured activation; the output layer is
            # identity when the loss folds in its own nonlinearity
            act = self.net_activation
            if i == len(dims) - 2 and self.loss == "softmax_cross_entropy":
                act = "identity"
            specs.append(LayerSpec(dims[i], dims[i + 1], act, self.net_bias))
        return specs

    def validate(self) -> "ExperimentConfig":
        if self.seed is None:
            raise ConfigError("seed is mandatory (set `seed = ...` or pass --seed)")
        if self.optimizer not in TRAINABLE_OPTIMIZERS:
            raise ConfigError(
                f"unknown optimizer {self.optimizer!r}; choose from {TRAINABLE_OPTIMIZERS}"
            )
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must be in (0, 1)")
        if not 0.0 < self.zeta <= 1.0:
            raise ConfigError("zeta must be in (0, 1]")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.inversion_period < 0:
            raise ConfigError("inversion_period must be >= 0 (0 disables factor updates)")
        if self.iterations < 1 or self.batch < 1 or self.workers < 1:
            raise ConfigError("iterations, batch and workers must be >= 1")
        if len(self.net_dims) < 2 or any(d < 1 for d in self.net_dims):
            raise ConfigError(f"net.dims needs >= 2 positive entries, got {self.net_dims}")
        if self.net_activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.net_activation!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.optimizer == "sngd":
            if self.workers != 1:
                raise ConfigError("sngd supports a single logical worker")
            if self.batch > 64:
                raise ConfigError("sngd batch is capped at 64 at desk scale")
        if self.dataset_kind == "idx":
            for p in (self.dataset_images, self.dataset_labels):
                if not p:
                    raise ConfigError("idx dataset needs dataset.images and dataset.labels")
                if not os.path.exists(p):
                    raise ConfigError(f"dataset path not found: {p}")
        elif self.dataset_kind not in ("xor", "gaussian-blobs", "random-autoencoder"):
            raise ConfigError(f"unknown dataset kind {self.dataset_kind!r}")
        return self


_BOOL_KEYS = {"half_precision_comm", "net.bias"}
_INT_KEYS = {
    "inversion_period", "window", "workers", "seed", "batch", "iterations",
    "rank1_every", "epoch_iters", "dataset.n", "dataset.dim", "dataset.classes",
    "dataset.rank",
}
_FLOAT_KEYS = {
    "gamma", "zeta", "epsilon_norm", "lr", "momentum", "damping", "switch_ratio",
    "beta", "decay_factor", "dataset.scale", "dataset.sigma", "dataset.offset",
    "dataset.noise",
}
_STR_KEYS = {
    "optimizer", "loss", "scheduler", "net.activation", "dataset.kind",
    "dataset.images", "dataset.labels",
}
_LIST_KEYS = {"milestones", "net.dims"}

_DATASET_PARAM_KEYS = {
    "dataset.dim": "dim", "dataset.classes": "classes", "dataset.scale": "scale",
    "dataset.sigma": "sigma", "dataset.rank": "rank", "dataset.offset": "offset",
    "dataset.noise": "noise",
}


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _coerce(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _BOOL_KEYS:
            return _parse_bool(raw, key)
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _LIST_KEYS:
            return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    if key in _STR_KEYS:
        return raw
    raise ConfigError(f"unknown config key {key!r}")


_FIELD_MAP = {
    "net.dims": "net_dims",
    "net.activation": "net_activation",
    "net.bias": "net_bias",
    "dataset.kind": "dataset_kind",
    "dataset.n": "dataset_n",
    "dataset.images": "dataset_images",
    "dataset.labels": "dataset_labels",
}


def apply_assignment(cfg: ExperimentConfig, key: str, raw_value: str) -> None:
    value = _coerce(key, raw_value)
    if key in _DATASET_PARAM_KEYS:
        cfg.dataset_params[_DATASET_PARAM_KEYS[key]] = value
        return
    attr = _FIELD_MAP.get(key, key)
    if attr not in {f.name for f in fields(ExperimentConfig)}:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(cfg, attr, value)


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, raw = stripped.split("=", 1)
        apply_assignment(cfg, key.strip(), raw)
    return cfg


def load_config(
    path: str | None,
    overrides: list[str] | None = None,
    seed: int | None = None,
    optimizer: str | None = None,
) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            cfg = parse_config_text(fh.read(), cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        apply_assignment(cfg, key.strip(), raw)
    if optimizer is not None:
        cfg.optimizer = optimizer
    if seed is not None:
        cfg.seed = seed
    return cfg.validate()


def config_as_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(ExperimentConfig):
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            val = list(val)
        out[f.name] = val
    return out
