"""Multiple-choice accuracy from the final step of Naive-prompt rationales."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dpo, kernels
from .filters import contains_answer_form
from .gateway import BackendConfig, generate_batch
from .prompts import Decoding, make_naive_request
from .errors import ValidationError
from .steps import parse_steps

UNDECIDED = "Step 1, the answer cannot be determined."


@dataclass
class EvalReport:
    total: int = 0
    correct: int = 0
    per_sample: list = field(default_factory=list)  # (sample_id, predicted label, verdict, mode)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def summary(self) -> dict:
        return {"total": self.total, "correct": self.correct, "accuracy": self.accuracy}

    def lines(self) -> list:
        out = [self.summary()]
        for sid, pred, verdict, mode in self.per_sample:
            out.append({"sample_id": sid, "predicted": pred, "verdict": verdict, "extraction_mode": mode})
        return out


def write_report(report: EvalReport, path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        for obj in report.lines():
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_report(path) -> EvalReport:
    lines = [json.loads(x) for x in Path(path).read_text(encoding="utf-8").splitlines() if x.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty report")
    rep = EvalReport(lines[0]["total"], lines[0]["correct"])
    rep.per_sample = [(d["sample_id"], d["predicted"], d["verdict"], d["extraction_mode"]) for d in lines[1:]]
    return rep


def extract_answer_with_mode(rationale_text: str, choices):
    """Return ``(choice or None, mode)``, mode in {"label", "text", "none"}.

    Candidates are choices whose label, text or full rendering appears in the
    final step. Exactly one candidate is required; the mode reports whether
    it was found by its label (checked first) or only by its text.
    """
    choices = list(choices)
    if not choices:
        raise ValidationError("choices must be nonempty")
    if not rationale_text or not rationale_text.strip():
        return None, "none"
    final = parse_steps(rationale_text).final_step
    by_label = [c for c in choices if contains_answer_form(final, c.label)]
    by_text = [c for c in choices if contains_answer_form(final, c.text)]
    found = list(dict.fromkeys(by_label + by_text))
    if len(found) != 1:
        return None, "none"
    hit = found[0]
    return hit, ("label" if hit in by_label else "text")


def extract_answer(rationale_text: str, choices):
    return extract_answer_with_mode(rationale_text, choices)[0]


class PolicyResponder:
    """Answers Naive prompts with the toy policy.

    For each choice the policy scores the sentence "Step 1, the answer is
    <label> <text>." under the sample's context token and answers with the
    most likely one. A tie at the top yields an undecided rationale.
    """

    template = "Step 1, the answer is {answer}."

    def __init__(self, policy: dpo.ToyPolicy):
        self.policy = policy
        self._logp = policy.log_probs()

    def respond(self, sample) -> str:
        vocab = self.policy.vocab
        ctx = vocab.context_token(sample.image_path, sample.question)
        texts = [self.template.format(answer=c.render()) for c in sample.choices]
        seqs = [vocab.encode(t) for t in texts]
        tokens, offsets = kernels.pack(seqs)
        context = np.full(len(seqs), ctx, dtype=np.int64)
        scores = kernels.sequence_logprobs(self._logp, context, tokens, offsets)
        best = np.flatnonzero(scores == scores.max())
        if len(best) != 1:
            return UNDECIDED
        return texts[int(best[0])]


def evaluate(target, samples, prompt_kind: str = "Naive", decoding: Decoding = Decoding(), config: BackendConfig | None = None,
             image_loader=None, rng_seed: int = 0) -> EvalReport:
    """Score ``target`` (a ToyPolicy or a backend) on multiple-choice samples.

    Backends receive Naive prompts only; the answer is never shown.
    ``image_loader`` maps a sample to its image array (backends only).
    """
    if prompt_kind != "Naive":
        raise ValidationError("evaluation uses the Naive prompt; an AoT prompt would leak the answer")
    samples = list(samples)
    if not samples:
        raise ValidationError("evaluation set is empty")

    if isinstance(target, dpo.ToyPolicy):
        responder = PolicyResponder(target)
        texts = [responder.respond(s) for s in samples]
        errors = [None] * len(samples)
    else:
        if image_loader is None:
            raise ValidationError("backend evaluation needs an image loader")
        config = config or BackendConfig()
        requests = [make_naive_request(s, image_loader(s), decoding, rng_seed) for s in samples]
        results = generate_batch(requests, config, backend=target)
        texts = [r.rationale_text for r in results]
        errors = [r.error for r in results]

    report = EvalReport(total=len(samples))
    for s, text, err in zip(samples, texts, errors):
        if err is not None:
            report.per_sample.append((s.id, None, "generation-error", "none"))
            continue
        pred, mode = extract_answer_with_mode(text, s.choices)
        verdict = "correct" if pred == s.correct else "incorrect"
        if verdict == "correct":
            report.correct += 1
        report.per_sample.append((s.id, pred.label if pred else None, verdict, mode))
    return report
