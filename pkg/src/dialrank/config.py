"""Run configuration shared by data generation, training, and evaluation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model dimensions (desk-scale defaults; full-scale values are 512/300/5/1000)
    d: int = 32
    emb_dim: int = 16
    k: int = 2
    l: int = 64
    # ranking
    tau: float = 0.25
    n_select: int = 10
    m_pool: int = 30
    beam_width: int = 15
    # synthetic data shape
    n_candidates: int = 30
    n_objects: int = 4
    n_dialogs: int = 32
    turns_per_dialog: int = 4
    pronoun_fraction: float = 0.5
    synonym_relevance: float = 0.5  # 0 drops the half-relevant synonym candidate
    descriptive_answers: bool = False
    feature_noise: float = 0.05
    min_count: int = 0
    # optimizer
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    decay_rate: float = 0.25
    decay_interval: int = 7
    epochs_primary: int = 7
    epochs_joint: int = 15
    grad_accumulation: int = 1
    # run identity
    seed: int = 0
    model: str = "discriminative"

    def validate(self) -> "RunConfig":
        if not (0 < self.tau <= 1):
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if not (1 <= self.n_select <= self.m_pool <= self.n_candidates):
            raise ConfigError(
                f"need 1 <= N <= M <= C, got N={self.n_select} M={self.m_pool} C={self.n_candidates}"
            )
        if self.model not in ("discriminative", "generative"):
            raise ConfigError(f"unknown model kind: {self.model!r}")
        for name in ("d", "emb_dim", "k", "l", "n_objects", "n_dialogs", "turns_per_dialog",
                     "beam_width", "decay_interval", "grad_accumulation"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_candidates < 2:
            raise ConfigError(f"need at least 2 candidates, got {self.n_candidates}")
        for name in ("pronoun_fraction",):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not (0.0 <= self.synonym_relevance <= 1.0):
            raise ConfigError(f"synonym_relevance must lie in [0, 1], got {self.synonym_relevance}")
        if self.epochs_primary < 0 or self.epochs_joint < 0:
            raise ConfigError("epoch counts must be nonnegative")
        if self.lr <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ConfigError("invalid optimizer settings")
        if not (0 < self.decay_rate <= 1):
            raise ConfigError(f"decay_rate must lie in (0, 1], got {self.decay_rate}")
        if self.min_count < 0:
            raise ConfigError(f"min_count must be >= 0, got {self.min_count}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj).validate()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def with_overrides(self, overrides: dict) -> "RunConfig":
        merged = self.to_dict()
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(merged)
