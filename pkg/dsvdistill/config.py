"""Configuration handling for dsvdistill."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from .util import DsvDistillError, deep_merge

CONFIG_FILENAME = ".dsvdistill.yml"

DEFAULT_AUGMENT_POLICY = "color,translate,cutout,flip,scale,rotate"

DEFAULT_CONFIG: dict[str, Any] = {
    "log_level": "INFO",
    "model": {
        "arch": "convnet",
        "width": 128,
        "depth": 3,
    },
    "distill": {
        "ipc": 1,
        "pipc": 50,
        "alpha": 0.01,
        "beta": 0.0,
        "gamma": 0.001,
        "steps": 1000,
        "pixel_lr": 0.1,
        "lambda_lr": None,  # pixel_lr * 0.1
        "init": "noise",
        "gated": False,
        "seed": 0,
        "augment": DEFAULT_AUGMENT_POLICY,
        "optimizer": "sgd",
        "momentum": 0.5,
        "log_every": 100,
        "embed_width": 128,
        "embed_depth": 3,
    },
    "eval": {
        "lr": 0.1,
        "rho": 0.001,
        "epochs": 300,
        "batch_size": 256,
        "full_batch_limit": 512,
        "seeds": [0, 1, 2],
        "long_protocol": False,
    },
}

LONG_EPOCHS = 5000
INIT_MODES = ("noise", "real")
OPTIMIZERS = ("sgd", "momentum", "adam")


class ConfigError(DsvDistillError):
    """Raised when configuration could not be loaded, parsed or validated."""


def _parse_pipc(value: Any) -> int | None:
    if value is None or (isinstance(value, str) and value.lower() == "all"):
        return None
    try:
        pipc = int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"pipc must be a positive integer or 'all', got {value!r}") from exc
    if pipc < 1:
        raise ConfigError(f"pipc must be >= 1, got {pipc}")
    return pipc


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.01
    beta: float = 0.0
    gamma: float = 0.001

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "convnet"
    width: int = 128
    depth: int = 3

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        merged = deep_merge(DEFAULT_CONFIG["model"], data)
        return cls(arch=str(merged["arch"]), width=int(merged["width"]), depth=int(merged["depth"]))


@dataclass(frozen=True)
class DistillConfig:
    ipc: int = 1
    pipc: int | None = 50
    weights: LossWeights = field(default_factory=LossWeights)
    steps: int = 1000
    pixel_lr: float = 0.1
    lambda_lr: float = 0.01
    init: str = "noise"
    gated: bool = False
    seed: int = 0
    augment: str = DEFAULT_AUGMENT_POLICY
    optimizer: str = "sgd"
    momentum: float = 0.5
    log_every: int = 100
    embed_width: int = 128
    embed_depth: int = 3

    def __post_init__(self) -> None:
        if self.ipc < 1:
            raise ConfigError(f"ipc must be >= 1, got {self.ipc}")
        if self.pipc is not None and self.pipc < 1:
            raise ConfigError(f"pipc must be >= 1 or 'all', got {self.pipc}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.pixel_lr <= 0 or self.lambda_lr <= 0:
            raise ConfigError("pixel_lr and lambda_lr must be > 0")
        if self.init not in INIT_MODES:
            raise ConfigError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DistillConfig":
        """Construct from a ``distill`` section, applying defaults for missing keys."""
        merged = deep_merge(DEFAULT_CONFIG["distill"], data)
        pixel_lr = float(merged["pixel_lr"])
        lambda_lr = merged.get("lambda_lr")
        return cls(
            ipc=int(merged["ipc"]),
            pipc=_parse_pipc(merged["pipc"]),
            weights=LossWeights(
                alpha=float(merged["alpha"]),
                beta=float(merged["beta"]),
                gamma=float(merged["gamma"]),
            ),
            steps=int(merged["steps"]),
            pixel_lr=pixel_lr,
            lambda_lr=pixel_lr * 0.1 if lambda_lr is None else float(lambda_lr),
            init=str(merged["init"]),
            gated=bool(merged["gated"]),
            seed=int(merged["seed"]),
            augment=str(merged["augment"] or ""),
            optimizer=str(merged["optimizer"]),
            momentum=float(merged["momentum"]),
            log_every=max(1, int(merged["log_every"])),
            embed_width=int(merged["embed_width"]),
            embed_depth=int(merged["embed_depth"]),
        )

    def snapshot(self) -> dict[str, Any]:
        """Return a JSON-serialisable view used in run manifests."""
        data = asdict(self)
        data["pipc"] = "all" if self.pipc is None else self.pipc
        return data


@dataclass(frozen=True)
class SamConfig:
    lr: float = 0.1
    rho: float = 0.001
    epochs: int = 300
    batch_size: int = 256
    full_batch_limit: int = 512
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.rho < 0:
            raise ConfigError(f"rho must be >= 0, got {self.rho}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class EvalConfig:
    sam: SamConfig = field(default_factory=SamConfig)
    seeds: tuple[int, ...] = (0, 1, 2)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EvalConfig":
        merged = deep_merge(DEFAULT_CONFIG["eval"], data)
        epochs = LONG_EPOCHS if merged.get("long_protocol") else int(merged["epochs"])
        seeds = tuple(int(s) for s in merged["seeds"])
        if not seeds:
            raise ConfigError("eval.seeds must name at least one seed")
        return cls(
            sam=SamConfig(
                lr=float(merged["lr"]),
                rho=float(merged["rho"]),
                epochs=epochs,
                batch_size=int(merged["batch_size"]),
                full_batch_limit=int(merged["full_batch_limit"]),
                seed=seeds[0],
            ),
            seeds=seeds,
        )

    def for_seed(self, seed: int) -> SamConfig:
        return replace(self.sam, seed=seed)


@dataclass(frozen=True)
class AppConfig:
    log_level: str = DEFAULT_CONFIG["log_level"]
    model: ModelConfig = field(default_factory=ModelConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    raw: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AppConfig":
        """Construct from a dictionary, applying defaults for missing keys."""
        merged = deep_merge(DEFAULT_CONFIG, data)
        for section in ("model", "distill", "eval"):
            if not isinstance(merged.get(section), dict):
                raise ConfigError(f"Configuration section '{section}' must be a mapping.")
        return cls(
            log_level=str(merged.get("log_level", "INFO")),
            model=ModelConfig.from_dict(merged["model"]),
            distill=DistillConfig.from_dict(merged["distill"]),
            eval=EvalConfig.from_dict(merged["eval"]),
            raw=merged,
        )


def standard_schedule(ipc: int, pipc: int | None) -> dict[str, Any]:
    """
    Return the standard synthesis schedule for an (ipc, pipc) cell.

    Stationarity rate follows pipc (10 / 50 / all -> 0.1 / 0.01 / 0.001), the DM
    ratio is 0.01 at ipc 50 and 0.001 elsewhere, and ipc 1 starts from noise.
    """
    if pipc is None:
        alpha = 0.001
    elif pipc <= 10:
        alpha = 0.1
    else:
        alpha = 0.01
    return {
        "alpha": alpha,
        "gamma": 0.01 if ipc >= 50 else 0.001,
        "init": "noise" if ipc == 1 else "real",
    }


def load_config(path: Path | None = None) -> AppConfig:
    """Load configuration from a file, applying defaults when missing."""
    config_path = path or Path(CONFIG_FILENAME)
    if not config_path.exists():
        if path is not None:
            raise ConfigError(f"Configuration file not found: {config_path}")
        return AppConfig.from_dict({})

    try:
        with config_path.open("r", encoding="utf-8") as handle:
            payload = yaml.safe_load(handle) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"Invalid YAML in {config_path}") from exc

    if not isinstance(payload, dict):
        raise ConfigError("Configuration root must be a mapping.")

    return AppConfig.from_dict(payload)


def save_config(config: AppConfig, path: Path | None = None) -> None:
    """Write configuration back to disk."""
    config_path = path or Path(CONFIG_FILENAME)
    with config_path.open("w", encoding="utf-8") as handle:
        yaml.safe_dump(config.raw or DEFAULT_CONFIG, handle, sort_keys=False)
