"""Core record types and their line-delimited JSON formats.

Three file kinds share one convention: UTF-8, one JSON object per line, keys
emitted in a fixed order, no timestamps. Writing the same values twice gives
byte-identical files.

Sample manifest::

    {"id", "image_path", "question", "choices": [{"label", "text"}, ...],
     "correct": {"label", "text"}, "incorrect": [{"label", "text"}, ...]}

Rationale records::

    {"sample_id", "polarity", "target_answer", "rationale_text", "steps",
     "provenance": {"prompt_kind", "backend_id", "temperature", "top_p",
                    "rng_seed", "augmentation", "fingerprint"},
     "verdicts": {"conclusion", "circularity"}}

Preference pairs::

    {"sample_id", "image_path", "question", "choices", "chosen", "rejected",
     "iteration", "provenance": {"chosen": {...}, "rejected": {...}}}
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .errors import InsufficientSamplesError, ManifestError, ValidationError
from .seeding import rng as make_rng
from .steps import parse_steps

POLARITIES = ("positive", "negative")
PROMPT_KINDS = ("AoT", "Naive")
CONCLUSION_VERDICTS = ("pass", "fail", "pending")
CIRCULARITY_VERDICTS = ("pass", "fail", "not-applied", "pending")


@dataclass(frozen=True)
class Choice:
    label: str
    text: str

    def render(self) -> str:
        return f"{self.label} {self.text}"

    def to_dict(self) -> dict:
        return {"label": self.label, "text": self.text}

    @classmethod
    def from_dict(cls, d) -> "Choice":
        if not isinstance(d, dict):
            raise TypeError("choice must be an object with label and text")
        label, text = d["label"], d["text"]
        if not isinstance(label, str) or not isinstance(text, str):
            raise TypeError("choice label and text must be strings")
        return cls(label, text)


@dataclass(frozen=True)
class McSample:
    id: str
    image_path: str
    question: str
    choices: tuple
    correct: Choice
    incorrect: tuple

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))
        object.__setattr__(self, "incorrect", tuple(self.incorrect))

    def validate(self) -> None:
        sid = self.id
        if not self.id:
            raise ValidationError("sample id must be nonempty")
        if not self.question.strip():
            raise ValidationError(f"sample {sid}: empty question")
        if len(self.choices) < 2:
            raise ValidationError(f"sample {sid}: needs at least 2 choices")
        if len(set(self.choices)) != len(self.choices):
            raise ValidationError(f"sample {sid}: duplicate choices")
        if self.correct not in self.choices:
            raise ValidationError(f"sample {sid}: correct answer {self.correct.render()!r} not in choices")
        if not self.incorrect:
            raise ValidationError(f"sample {sid}: incorrect answer set is empty")
        for c in self.incorrect:
            if c not in self.choices:
                raise ValidationError(f"sample {sid}: incorrect answer {c.render()!r} not in choices")
            if c == self.correct:
                raise ValidationError(f"sample {sid}: {c.render()!r} is both correct and incorrect")
        if len(set(self.incorrect)) != len(self.incorrect):
            raise ValidationError(f"sample {sid}: duplicate incorrect answers")
        if {self.correct, *self.incorrect} != set(self.choices):
            raise ValidationError(f"sample {sid}: correct and incorrect answers do not cover the choices")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image_path": self.image_path,
            "question": self.question,
            "choices": [c.to_dict() for c in self.choices],
            "correct": self.correct.to_dict(),
            "incorrect": [c.to_dict() for c in self.incorrect],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "McSample":
        return cls(
            id=_str(d, "id"),
            image_path=_str(d, "image_path"),
            question=_str(d, "question"),
            choices=tuple(Choice.from_dict(c) for c in _list(d, "choices")),
            correct=Choice.from_dict(_get(d, "correct")),
            incorrect=tuple(Choice.from_dict(c) for c in _list(d, "incorrect")),
        )


@dataclass(frozen=True)
class Provenance:
    prompt_kind: str
    backend_id: str
    temperature: float
    top_p: float
    rng_seed: int
    augmentation: dict | None = None
    fingerprint: str = ""

    def to_dict(self) -> dict:
        return {
            "prompt_kind": self.prompt_kind,
            "backend_id": self.backend_id,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "rng_seed": self.rng_seed,
            "augmentation": self.augmentation,
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        kind = _str(d, "prompt_kind")
        if kind not in PROMPT_KINDS:
            raise ValueError(f"prompt_kind must be one of {PROMPT_KINDS}")
        aug = d.get("augmentation")
        if aug is not None and not isinstance(aug, dict):
            raise TypeError("augmentation must be an object or null")
        return cls(
            prompt_kind=kind,
            backend_id=_str(d, "backend_id"),
            temperature=float(_get(d, "temperature")),
            top_p=float(_get(d, "top_p")),
            rng_seed=int(_get(d, "rng_seed")),
            augmentation=aug,
            fingerprint=str(d.get("fingerprint", "")),
        )


@dataclass(frozen=True)
class RationaleRecord:
    sample_id: str
    polarity: str
    target_answer: Choice
    rationale_text: str
    provenance: Provenance
    steps: tuple = None
    verdicts: dict = field(default_factory=lambda: {"conclusion": "pending", "circularity": "pending"})

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise ValidationError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")
        parsed = tuple(parse_steps(self.rationale_text).texts)
        if self.steps is None:
            object.__setattr__(self, "steps", parsed)
        else:
            object.__setattr__(self, "steps", tuple(self.steps))
            if self.steps != parsed:
                raise ValidationError(f"record for {self.sample_id}: steps do not match the parse of rationale_text")
        v = dict(self.verdicts)
        if v.get("conclusion") not in CONCLUSION_VERDICTS:
            raise ValidationError(f"bad conclusion verdict {v.get('conclusion')!r}")
        if v.get("circularity") not in CIRCULARITY_VERDICTS:
            raise ValidationError(f"bad circularity verdict {v.get('circularity')!r}")
        object.__setattr__(self, "verdicts", {"conclusion": v["conclusion"], "circularity": v["circularity"]})

    @property
    def passed(self) -> bool:
        """True when every applicable filter returned pass."""
        return self.verdicts["conclusion"] == "pass" and self.verdicts["circularity"] in ("pass", "not-applied")

    def with_verdicts(self, conclusion: str, circularity: str) -> "RationaleRecord":
        return replace(self, verdicts={"conclusion": conclusion, "circularity": circularity})

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "polarity": self.polarity,
            "target_answer": self.target_answer.to_dict(),
            "rationale_text": self.rationale_text,
            "steps": list(self.steps),
            "provenance": self.provenance.to_dict(),
            "verdicts": dict(self.verdicts),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RationaleRecord":
        return cls(
            sample_id=_str(d, "sample_id"),
            polarity=_str(d, "polarity"),
            target_answer=Choice.from_dict(_get(d, "target_answer")),
            rationale_text=_str(d, "rationale_text"),
            steps=tuple(_list(d, "steps")),
            provenance=Provenance.from_dict(_get(d, "provenance")),
            verdicts=_get(d, "verdicts"),
        )


def validate_record(record: RationaleRecord, sample: McSample) -> None:
    """Check the polarity invariants of ``record`` against its sample."""
    if record.sample_id != sample.id:
        raise ValidationError(f"record references {record.sample_id!r}, not sample {sample.id!r}")
    if record.polarity == "positive" and record.target_answer != sample.correct:
        raise ValidationError(f"positive record for {sample.id} does not target the correct answer")
    if record.polarity == "negative" and record.target_answer not in sample.incorrect:
        raise ValidationError(f"negative record for {sample.id} targets an answer outside the incorrect set")


@dataclass(frozen=True)
class PreferencePair:
    sample_id: str
    image_path: str
    question: str
    choices: tuple
    chosen: str
    rejected: str
    iteration: int
    provenance: dict  # {"chosen": {...provenance, "verdicts"}, "rejected": {...}}

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))

    @classmethod
    def from_records(cls, sample: McSample, positive: RationaleRecord, negative: RationaleRecord, iteration: int):
        if positive.sample_id != sample.id or negative.sample_id != sample.id:
            raise ValidationError(f"pair for {sample.id}: records reference different samples")

        def prov(r):
            d = r.provenance.to_dict()
            d["verdicts"] = dict(r.verdicts)
            return d

        return cls(
            sample_id=sample.id,
            image_path=sample.image_path,
            question=sample.question,
            choices=sample.choices,
            chosen=positive.rationale_text,
            rejected=negative.rationale_text,
            iteration=iteration,
            provenance={"chosen": prov(positive), "rejected": prov(negative)},
        )

    def validate(self) -> None:
        sid = self.sample_id
        if not isinstance(self.iteration, int) or self.iteration < 1:
            raise ValidationError(f"pair {sid}: iteration must be an integer >= 1")
        if not self.chosen.strip() or not self.rejected.strip():
            raise ValidationError(f"pair {sid}: chosen and rejected must be nonempty")
        try:
            cv = self.provenance["chosen"]["verdicts"]
            rv = self.provenance["rejected"]["verdicts"]
        except (KeyError, TypeError):
            raise ValidationError(f"pair {sid}: provenance lacks filter verdicts") from None
        if cv.get("conclusion") != "pass" or cv.get("circularity") != "pass":
            raise ValidationError(f"pair {sid}: chosen rationale did not pass conclusion and circularity filters")
        if rv.get("conclusion") != "pass" or rv.get("circularity") not in ("pass", "not-applied"):
            raise ValidationError(f"pair {sid}: rejected rationale did not pass the conclusion filter")

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "image_path": self.image_path,
            "question": self.question,
            "choices": [c.to_dict() for c in self.choices],
            "chosen": self.chosen,
            "rejected": self.rejected,
            "iteration": self.iteration,
            "provenance": {"chosen": self.provenance["chosen"], "rejected": self.provenance["rejected"]},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreferencePair":
        it = _get(d, "iteration")
        if not isinstance(it, int) or isinstance(it, bool):
            raise TypeError("iteration must be an integer")
        prov = _get(d, "provenance")
        if not isinstance(prov, dict) or "chosen" not in prov or "rejected" not in prov:
            raise ValueError("provenance must hold chosen and rejected entries")
        return cls(
            sample_id=_str(d, "sample_id"),
            image_path=_str(d, "image_path"),
            question=_str(d, "question"),
            choices=tuple(Choice.from_dict(c) for c in _list(d, "choices")),
            chosen=_str(d, "chosen"),
            rejected=_str(d, "rejected"),
            iteration=it,
            provenance=prov,
        )


# field accessors that report the offending key


class _FieldError(Exception):
    def __init__(self, field, message):
        self.field = field
        super().__init__(message)


def _get(d, key):
    if key not in d:
        raise _FieldError(key, "missing field")
    return d[key]


def _str(d, key) -> str:
    v = _get(d, key)
    if not isinstance(v, str):
        raise _FieldError(key, f"expected a string, got {type(v).__name__}")
    return v


def _list(d, key) -> list:
    v = _get(d, key)
    if not isinstance(v, list):
        raise _FieldError(key, f"expected a list, got {type(v).__name__}")
    return v


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False)


def _read_lines(path, parse):
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(path, lineno, None, f"malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ManifestError(path, lineno, None, "record must be a JSON object")
            try:
                out.append(parse(obj))
            except _FieldError as exc:
                raise ManifestError(path, lineno, exc.field, str(exc)) from None
            except KeyError as exc:
                raise ManifestError(path, lineno, exc.args[0], "missing field") from None
            except ValidationError as exc:
                raise ManifestError(path, lineno, None, str(exc)) from None
            except (TypeError, ValueError) as exc:
                raise ManifestError(path, lineno, None, str(exc)) from None
    return out


def _write_lines(path, dicts: Iterable[dict]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for d in dicts:
            fh.write(_dumps(d))
            fh.write("\n")
    os.replace(tmp, path)


def read_manifest(path) -> list[McSample]:
    """Read and validate a sample manifest, preserving file order."""

    def parse(obj):
        s = McSample.from_dict(obj)
        s.validate()
        return s

    samples = _read_lines(path, parse)
    seen = set()
    for s in samples:
        if s.id in seen:
            raise ValidationError(f"{path}: duplicate sample id {s.id!r}")
        seen.add(s.id)
    return samples


def write_manifest(samples: Iterable[McSample], path) -> None:
    samples = list(samples)
    for s in samples:
        s.validate()
    _write_lines(path, (s.to_dict() for s in samples))


def read_records(path) -> list[RationaleRecord]:
    return _read_lines(path, RationaleRecord.from_dict)


def write_records(records: Iterable[RationaleRecord], path) -> None:
    _write_lines(path, (r.to_dict() for r in records))


def read_pairs(path) -> list[PreferencePair]:
    def parse(obj):
        p = PreferencePair.from_dict(obj)
        p.validate()
        return p

    return _read_lines(path, parse)


def write_pairs(pairs: Iterable[PreferencePair], path) -> None:
    """Write preference pairs; refuses the whole file if any pair is invalid."""
    pairs = list(pairs)
    for p in pairs:
        p.validate()
    _write_lines(path, (p.to_dict() for p in pairs))


def sample_pool(samples, m: int, iteration: int, used_ids, rng_seed: int) -> list[McSample]:
    """Draw ``m`` samples uniformly without replacement, skipping ``used_ids``.

    The draw depends on (rng_seed, iteration) only, so pools are reproducible
    and, with ``used_ids`` threaded between iterations, pairwise disjoint.
    """
    used = set(used_ids)
    unused = [s for s in samples if s.id not in used]
    if m < 0:
        raise ValidationError("pool size must be nonnegative")
    if len(unused) < m:
        raise InsufficientSamplesError(
            f"iteration {iteration} needs {m} unused samples but only {len(unused)} remain "
            f"(short by {m - len(unused)})"
        )
    idx = make_rng(rng_seed, "pool", iteration).choice(len(unused), size=m, replace=False)
    return [unused[int(i)] for i in idx]


def resolve_image_path(sample: McSample, base_dir) -> Path:
    p = Path(sample.image_path)
    return p if p.is_absolute() else Path(base_dir) / p
