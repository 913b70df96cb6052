"""Image perturbations for the negative branch.

Images are ``uint8`` arrays of shape (H, W, 3). Flip and erase act on them
directly; forward noising works on floats scaled to [-1, 1] and ``apply``
re-quantizes to 8 bits at the end.
"""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .seeding import subseed


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear variance schedule with cumulative signal rates.

    ``alpha_bar[t]`` is the product of ``1 - beta_s`` for s = 1..t, with
    ``alpha_bar[0] == 1``.
    """

    total_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValidationError("total_steps must be >= 1")
        if not (0 < self.beta_start < 1 and 0 < self.beta_end < 1):
            raise ValidationError("betas must lie in (0, 1)")
        betas = np.linspace(self.beta_start, self.beta_end, self.total_steps, dtype=np.float64)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        object.__setattr__(self, "_betas", betas)
        object.__setattr__(self, "_alpha_bar", alpha_bar)

    @property
    def beta(self) -> np.ndarray:
        # beta[0] is the variance of step 1
        return self._betas

    @property
    def alpha_bar(self) -> np.ndarray:
        return self._alpha_bar


DEFAULT_SCHEDULE = NoiseSchedule()


@dataclass(frozen=True)
class AugmentationDescriptor:
    noise_step: int = 600
    flip_prob: float = 0.5
    erase_prob: float = 0.5
    erase_area: tuple = (0.02, 0.2)
    rng_seed: int = 0
    # "erase" follows the reported implementation settings; "crop" is the
    # alternative the method description names
    mode: str = "erase"
    crop_scale: tuple = (0.6, 1.0)
    total_steps: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "erase_area", tuple(float(x) for x in self.erase_area))
        object.__setattr__(self, "crop_scale", tuple(float(x) for x in self.crop_scale))
        for name in ("flip_prob", "erase_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {p}")
        if not 0 <= self.noise_step <= self.total_steps:
            raise ValidationError(f"noise_step must be in [0, {self.total_steps}], got {self.noise_step}")
        lo, hi = self.erase_area
        if not 0.0 < lo <= hi < 1.0:
            raise ValidationError(f"erase_area must be a range inside (0, 1), got {self.erase_area}")
        lo, hi = self.crop_scale
        if not 0.0 < lo <= hi <= 1.0:
            raise ValidationError(f"crop_scale must be a range inside (0, 1], got {self.crop_scale}")
        if self.mode not in ("erase", "crop"):
            raise ValidationError(f"mode must be 'erase' or 'crop', got {self.mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["erase_area"] = list(self.erase_area)
        d["crop_scale"] = list(self.crop_scale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationDescriptor":
        return cls(**d)


def to_signed(image: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float64 [-1, 1]."""
    return image.astype(np.float64) / 127.5 - 1.0


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.rint((np.clip(x, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def forward_noise(image: np.ndarray, t: int, schedule: NoiseSchedule = DEFAULT_SCHEDULE, rng_seed: int = 0) -> np.ndarray:
    """Sample x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps at step ``t``.

    ``image`` is a float buffer in [-1, 1]; the result is not clamped.
    """
    if not 0 <= t <= schedule.total_steps:
        raise ValidationError(f"noise step {t} outside [0, {schedule.total_steps}]")
    x0 = np.asarray(image, dtype=np.float64)
    if t == 0:
        return x0.copy()
    abar = schedule.alpha_bar[t]
    eps = np.random.default_rng(rng_seed).standard_normal(x0.shape)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def random_flip(image: np.ndarray, p: float, rng_seed: int) -> np.ndarray:
    """Mirror left-right with probability ``p``."""
    if np.random.default_rng(rng_seed).random() < p:
        return image[:, ::-1].copy()
    return image.copy()


def _erase_box(h, w, area_range, gen):
    lo, hi = area_range
    area = gen.uniform(lo, hi) * h * w
    log_r = gen.uniform(np.log(0.3), np.log(1 / 0.3), size=10)
    for lr in log_r:
        r = np.exp(lr)
        eh = int(round(np.sqrt(area * r)))
        ew = int(round(np.sqrt(area / r)))
        if 0 < eh <= h and 0 < ew <= w:
            break
    else:
        eh = min(h, max(1, int(round(np.sqrt(area)))))
        ew = min(w, max(1, int(round(area / eh))))
    top = int(gen.integers(0, h - eh + 1))
    left = int(gen.integers(0, w - ew + 1))
    return top, left, eh, ew


def random_erase(image: np.ndarray, p: float, area_range=(0.02, 0.2), rng_seed: int = 0) -> np.ndarray:
    """With probability ``p`` fill one random rectangle with uniform noise.

    The rectangle's area fraction is uniform in ``area_range``; its aspect
    ratio is log-uniform in [0.3, 1/0.3].
    """
    gen = np.random.default_rng(rng_seed)
    out = image.copy()
    if gen.random() >= p:
        return out
    h, w = image.shape[:2]
    top, left, eh, ew = _erase_box(h, w, area_range, gen)
    patch_shape = (eh, ew) + image.shape[2:]
    if image.dtype == np.uint8:
        out[top:top + eh, left:left + ew] = gen.integers(0, 256, size=patch_shape, dtype=np.uint8)
    else:
        out[top:top + eh, left:left + ew] = gen.uniform(-1.0, 1.0, size=patch_shape)
    return out


def random_crop(image: np.ndarray, p: float, scale=(0.6, 1.0), rng_seed: int = 0) -> np.ndarray:
    """With probability ``p`` crop a random window and resize it back (nearest)."""
    gen = np.random.default_rng(rng_seed)
    if gen.random() >= p:
        return image.copy()
    h, w = image.shape[:2]
    s = np.sqrt(gen.uniform(*scale))
    ch, cw = max(1, int(round(h * s))), max(1, int(round(w * s)))
    top = int(gen.integers(0, h - ch + 1))
    left = int(gen.integers(0, w - cw + 1))
    rows = top + (np.arange(h) * ch) // h
    cols = left + (np.arange(w) * cw) // w
    return image[rows][:, cols].copy()


def apply(descriptor: AugmentationDescriptor, image: np.ndarray) -> np.ndarray:
    """Flip, then erase (or crop), then noise; each with its own sub-seed."""
    d = descriptor
    out = random_flip(image, d.flip_prob, subseed(d.rng_seed, "flip"))
    if d.mode == "erase":
        out = random_erase(out, d.erase_prob, d.erase_area, subseed(d.rng_seed, "erase"))
    else:
        out = random_crop(out, d.erase_prob, d.crop_scale, subseed(d.rng_seed, "crop"))
    if d.noise_step > 0:
        schedule = DEFAULT_SCHEDULE if d.total_steps == DEFAULT_SCHEDULE.total_steps else NoiseSchedule(d.total_steps)
        noisy = forward_noise(to_signed(out), d.noise_step, schedule, subseed(d.rng_seed, "noise"))
        out = to_uint8(noisy)
    return out


def load_image(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_image(image: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB").save(Path(path), format="PNG")


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB").save(buf, format="PNG")
    return buf.getvalue()
