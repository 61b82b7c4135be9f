from dataclasses import dataclass
from typing import Any, Dict, Optional

from ratervar.exception.exception import ConfigError
from ratervar.misc.config import config_from_text, config_to_text, merge_config

KL_SCOPES = ("batch", "all")
GOLD_SOURCES = ("provided", "staple", "majority", "none")
LOSS_NAMES = ("dice", "cross_entropy")
ALIASES = {"lambda": "lambda_kl"}


@dataclass(frozen=True)
class TrainConfig:
    """
    Training hyperparameters. ``lambda_kl`` is the KL weight (also accepted
    as ``lambda`` in config files).

    Examples
    --------
    >>> cfg = TrainConfig.from_text("epochs = 5\\nlambda = 0.001")
    >>> cfg.epochs, cfg.lambda_kl, cfg.lr_latent
    (5, 0.001, 0.02)
    """

    epochs: int = 100
    lr_net: float = 0.0001
    lr_latent: float = 0.02
    decay_start_epoch: int = 40
    decay_factor: float = 1.1
    lambda_kl: float = 0.0005
    K_train: int = 1
    batch_size: int = 3
    loss: str = "dice"
    seed: int = 0
    D: int = 8
    prior_var: float = 2.0
    post_var: float = 8.0
    kl_scope: str = "batch"
    checkpoint_every: int = 10
    augment: bool = True
    gold_source: str = "provided"
    num_workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.lr_net <= 0 or self.lr_latent <= 0:
            raise ConfigError(
                f"learning rates must be positive (lr_net={self.lr_net}, lr_latent={self.lr_latent})"
            )
        if self.lambda_kl < 0:
            raise ConfigError(f"lambda_kl must be >= 0, got {self.lambda_kl}")
        if self.K_train < 1:
            raise ConfigError(f"K_train must be >= 1, got {self.K_train}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("need epochs >= 0 and batch_size >= 1")
        if self.D < 1:
            raise ConfigError(f"latent dimension D must be >= 1, got {self.D}")
        if self.prior_var <= 0 or self.post_var <= 0:
            raise ConfigError(
                f"variances must be positive (prior_var={self.prior_var}, post_var={self.post_var})"
            )
        if self.decay_factor <= 0 or self.decay_start_epoch < 0:
            raise ConfigError("decay_factor must be positive and decay_start_epoch >= 0")
        if self.loss not in LOSS_NAMES:
            raise ConfigError(f"loss must be one of {LOSS_NAMES}, got {self.loss!r}")
        if self.kl_scope not in KL_SCOPES:
            raise ConfigError(f"kl_scope must be one of {KL_SCOPES}, got {self.kl_scope!r}")
        if self.gold_source not in GOLD_SOURCES:
            raise ConfigError(f"gold_source must be one of {GOLD_SOURCES}, got {self.gold_source!r}")
        if self.checkpoint_every < 0 or self.num_workers < 1:
            raise ConfigError("need checkpoint_every >= 0 and num_workers >= 1")

    @classmethod
    def from_text(cls, text: str, source: str = "<string>", overrides=None) -> "TrainConfig":
        values = config_from_text(cls, text, source, aliases=ALIASES)
        return merge_config(cls(**values), overrides)

    @classmethod
    def from_file(cls, path: str, overrides: Optional[Dict[str, Any]] = None) -> "TrainConfig":
        """Defaults < file < overrides."""
        with open(path, "r") as f:
            return cls.from_text(f.read(), source=path, overrides=overrides)

    def replace(self, **overrides) -> "TrainConfig":
        return merge_config(self, overrides)

    def to_text(self) -> str:
        return config_to_text(self)
