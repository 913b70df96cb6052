"""Prompt rendering and generation-request packaging."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import augment as aug
from .dataset import Choice, McSample
from .errors import ValidationError
from .seeding import subseed

AOT_TEMPLATE = (
    'There is a question about this image, which is "[Question][Choices]". '
    'The correct answer to the question is "[Answer]". Why? Please provide concise '
    "and direct step-by-step reasoning in the format: 'Step 1, ... Step 2, ...'. "
    "Make sure to keep the number of steps as few as possible, and provide the "
    "correct answer in the final step."
)
NAIVE_TEMPLATE = "[Question][Choices] Please answer the question step-by-step!"
CHOICE_SEPARATOR = " "


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.7
    top_p: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.temperature <= 2.0:
            raise ValidationError(f"temperature must be in (0, 2], got {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValidationError(f"top_p must be in (0, 1], got {self.top_p}")


@dataclass(frozen=True, eq=False)
class GenerationRequest:
    sample_id: str
    image: np.ndarray
    prompt_text: str
    decoding: Decoding
    prompt_kind: str  # "AoT" or "Naive"
    polarity: str | None = None  # None for evaluation requests
    target_answer: Choice | None = None
    augmentation: aug.AugmentationDescriptor | None = None
    rng_seed: int = 0


def render_choices(choices) -> str:
    return CHOICE_SEPARATOR.join(c.render() for c in choices)


def _fill(template: str, **slots) -> str:
    # one pass over the template, so slot values are never re-scanned
    return re.sub(r"\[(\w+)\]", lambda m: slots.get(m.group(1), m.group(0)), template)


def build_aot_prompt(question: str, choices, answer: Choice) -> str:
    choices = list(choices)
    if not question or not question.strip():
        raise ValidationError("question must be nonempty")
    if not choices:
        raise ValidationError("choices must be nonempty")
    if answer not in choices:
        raise ValidationError(f"answer {answer.render()!r} is not one of the choices")
    return _fill(AOT_TEMPLATE, Question=question, Choices=render_choices(choices), Answer=answer.render())


def build_naive_prompt(question: str, choices) -> str:
    choices = list(choices)
    if not question or not question.strip():
        raise ValidationError("question must be nonempty")
    if not choices:
        raise ValidationError("choices must be nonempty")
    return _fill(NAIVE_TEMPLATE, Question=question, Choices=render_choices(choices))


def select_incorrect_answer(sample: McSample, rng_seed: int) -> Choice:
    if not sample.incorrect:
        raise ValidationError(f"sample {sample.id} has no incorrect answers; cannot build a negative")
    i = int(np.random.default_rng(rng_seed).integers(len(sample.incorrect)))
    return sample.incorrect[i]


def make_request(
    sample: McSample,
    polarity: str,
    image: np.ndarray,
    augment: aug.AugmentationDescriptor | None = None,
    decoding: Decoding = Decoding(),
    rng_seed: int = 0,
) -> GenerationRequest:
    """Package one AoT request.

    Positive requests carry the correct answer and the untouched image.
    Negative requests carry a randomly selected incorrect answer and the
    image after ``augment`` has been applied.
    """
    if polarity == "positive":
        target = sample.correct
        img = image
        descriptor = None
    elif polarity == "negative":
        if augment is None:
            raise ValidationError("negative requests need an augmentation descriptor")
        target = select_incorrect_answer(sample, subseed(rng_seed, "incorrect"))
        img = aug.apply(augment, image)
        descriptor = augment
    else:
        raise ValidationError(f"unknown polarity {polarity!r}")
    return GenerationRequest(
        sample_id=sample.id,
        image=img,
        prompt_text=build_aot_prompt(sample.question, sample.choices, target),
        decoding=decoding,
        prompt_kind="AoT",
        polarity=polarity,
        target_answer=target,
        augmentation=descriptor,
        rng_seed=rng_seed,
    )


def make_naive_request(sample: McSample, image: np.ndarray, decoding: Decoding = Decoding(), rng_seed: int = 0):
    return GenerationRequest(
        sample_id=sample.id,
        image=image,
        prompt_text=build_naive_prompt(sample.question, sample.choices),
        decoding=decoding,
        prompt_kind="Naive",
        rng_seed=rng_seed,
    )
