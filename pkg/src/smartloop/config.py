"""Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments. Unknown keys are rejected. Relative
paths are resolved against the directory holding the config file.

Keys and defaults are listed in ``DEFAULTS``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

from .augment import AugmentationDescriptor
from .dpo import TrainConfig
from .errors import ValidationError
from .gateway import BackendConfig
from .prompts import Decoding

DEFAULTS = {
    "data.manifest": "",
    "backend.kind": "mock",
    "backend.endpoint": "",
    "backend.model_id": "mock",
    "backend.max_parallel": "8",
    "backend.timeout": "60",
    "backend.max_attempts": "3",
    "backend.backoff_base": "0.5",
    "backend.fixtures": "",
    "backend.script": "",
    "backend.api_key_env": "SMARTLOOP_API_KEY",
    "decoding.temperature": "0.7",
    "decoding.top_p": "0.9",
    "augment.noise_step": "600",
    "augment.flip_prob": "0.5",
    "augment.erase_prob": "0.5",
    "augment.erase_area_min": "0.02",
    "augment.erase_area_max": "0.2",
    "augment.mode": "erase",
    "augment.total_steps": "1000",
    "filter.n": "3",
    "train.beta": "0.1",
    "train.lr": "0.01",
    "train.batch_size": "8",
    "train.epochs": "1",
    "train.context_tokens": "16",
    "loop.K": "2",
    "loop.M": "6000",
    "loop.early_stop_epsilon": "",
    "loop.negatives_per_sample": "1",
    "loop.run_dir": "run",
    "eval.target": "policy",
    "eval.manifest": "",
}
PATH_KEYS = ("data.manifest", "backend.fixtures", "backend.script", "loop.run_dir", "eval.manifest")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ValidationError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ValidationError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


@dataclass
class RunConfig:
    values: dict
    base_dir: Path

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        return cls.from_values(parse_config_text(text, str(path)), path.parent)

    @classmethod
    def from_values(cls, values: dict | None = None, base_dir=".") -> "RunConfig":
        merged = dict(DEFAULTS)
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ValidationError(f"unknown config key {k!r}")
            merged[k] = str(v)
        cfg = cls(merged, Path(base_dir))
        cfg.validate()
        return cfg

    def text(self) -> str:
        """Canonical form: every key, sorted, as written (paths unresolved)."""
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.text().encode("utf-8")).hexdigest()

    def get(self, key: str) -> str:
        return self.values[key]

    def _num(self, key, kind):
        try:
            return kind(self.values[key])
        except ValueError:
            raise ValidationError(f"config key {key} expects {kind.__name__}, got {self.values[key]!r}") from None

    def path(self, key: str) -> Path | None:
        v = self.values[key]
        if not v:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self) -> None:
        self.backend()
        self.decoding()
        self.augmentation(0)
        self.train()
        if self.K < 1:
            raise ValidationError("loop.K must be >= 1")
        if self.M < 1:
            raise ValidationError("loop.M must be >= 1")
        if self.negatives_per_sample < 1:
            raise ValidationError("loop.negatives_per_sample must be >= 1")
        if self.filter_n < 1:
            raise ValidationError("filter.n must be >= 1")
        if self.eval_target not in ("policy", "backend"):
            raise ValidationError("eval.target must be 'policy' or 'backend'")
        self.early_stop_epsilon

    def backend(self) -> BackendConfig:
        return BackendConfig(
            kind=self.values["backend.kind"],
            endpoint=self.values["backend.endpoint"],
            model_id=self.values["backend.model_id"],
            max_parallel=self._num("backend.max_parallel", int),
            timeout=self._num("backend.timeout", float),
            max_attempts=self._num("backend.max_attempts", int),
            backoff_base=self._num("backend.backoff_base", float),
            fixtures=str(self.path("backend.fixtures") or ""),
            script=str(self.path("backend.script") or ""),
            api_key_env=self.values["backend.api_key_env"],
        )

    def decoding(self) -> Decoding:
        return Decoding(self._num("decoding.temperature", float), self._num("decoding.top_p", float))

    def augmentation(self, rng_seed: int) -> AugmentationDescriptor:
        return AugmentationDescriptor(
            noise_step=self._num("augment.noise_step", int),
            flip_prob=self._num("augment.flip_prob", float),
            erase_prob=self._num("augment.erase_prob", float),
            erase_area=(self._num("augment.erase_area_min", float), self._num("augment.erase_area_max", float)),
            rng_seed=rng_seed,
            mode=self.values["augment.mode"],
            total_steps=self._num("augment.total_steps", int),
        )

    def train(self) -> TrainConfig:
        return TrainConfig(
            beta=self._num("train.beta", float),
            lr=self._num("train.lr", float),
            batch_size=self._num("train.batch_size", int),
            epochs=self._num("train.epochs", int),
        )

    @property
    def context_tokens(self) -> int:
        return self._num("train.context_tokens", int)

    @property
    def filter_n(self) -> int:
        return self._num("filter.n", int)

    @property
    def K(self) -> int:
        return self._num("loop.K", int)

    @property
    def M(self) -> int:
        return self._num("loop.M", int)

    @property
    def negatives_per_sample(self) -> int:
        return self._num("loop.negatives_per_sample", int)

    @property
    def early_stop_epsilon(self) -> float | None:
        v = self.values["loop.early_stop_epsilon"]
        return None if v == "" else self._num("loop.early_stop_epsilon", float)

    @property
    def eval_target(self) -> str:
        return self.values["eval.target"]
