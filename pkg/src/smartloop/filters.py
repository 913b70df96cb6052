"""Quality filters for generated rationales and preference-pair assembly."""
from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, fields

from . import kernels
from .dataset import Choice, McSample, PreferencePair, RationaleRecord, validate_record
from .errors import ValidationError
from .steps import StepParse, parse_steps  # noqa: F401  (re-exported)

MAX_OCCURRENCES = 3
DEFAULT_N = 3


def normalize(text: str) -> str:
    """Lowercase and collapse whitespace."""
    return " ".join(text.lower().split())


def contains_answer_form(haystack: str, needle: str) -> bool:
    """Normalized containment that does not split words or numbers.

    ``"4"`` is found in ``"it is 4."`` but not in ``"it is 14."``.
    """
    needle = normalize(needle)
    if not needle:
        return False
    pattern = re.escape(needle)
    if re.match(r"\w", needle[0]):
        pattern = r"(?<!\w)" + pattern
    if re.match(r"\w", needle[-1]):
        pattern += r"(?!\w)"
    return re.search(pattern, normalize(haystack)) is not None


def answer_forms(choice: Choice) -> tuple:
    return (choice.label, choice.text, choice.render())


def final_step_mentions(final_step: str, choice: Choice) -> bool:
    return any(contains_answer_form(final_step, form) for form in answer_forms(choice))


def conclusion_filter(record: RationaleRecord, sample: McSample) -> bool:
    """Pass iff the final step names the record's target answer."""
    validate_record(record, sample)
    final = parse_steps(record.rationale_text).final_step
    return final_step_mentions(final, record.target_answer)


def _is_punct(ch):
    return unicodedata.category(ch).startswith("P")


def ngram_words(text: str) -> list:
    """Lowercased words with punctuation removed."""
    stripped = "".join(ch for ch in text.lower() if not _is_punct(ch))
    return stripped.split()


def max_ngram_occurrences(text: str, n: int) -> int:
    """Highest count of any word n-gram, overlapping occurrences included."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    words = ngram_words(text)
    ids = {}
    encoded = [ids.setdefault(w, len(ids)) for w in words]
    return kernels.max_ngram_count(encoded, n)


def circularity_filter(rationale_text: str, n: int = DEFAULT_N) -> bool:
    """Fail when any n-gram occurs more than three times.

    Checking n-grams alone decides the ">= n" phrase rule: every repeated
    longer phrase contains a repeated n-gram.
    """
    return max_ngram_occurrences(rationale_text, n) <= MAX_OCCURRENCES


@dataclass
class FilterStats:
    kept: int = 0
    dropped_positive_conclusion: int = 0
    dropped_positive_circularity: int = 0
    dropped_negative_conclusion: int = 0
    missing_positive: int = 0
    missing_negative: int = 0

    def __add__(self, other: "FilterStats") -> "FilterStats":
        return FilterStats(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def judge(record: RationaleRecord, sample: McSample, n: int = DEFAULT_N) -> RationaleRecord:
    """Return ``record`` with its filter verdicts filled in.

    Negatives skip the circularity check: repeated phrases in a rejected
    rationale only give DPO more to push down.
    """
    conclusion = "pass" if conclusion_filter(record, sample) else "fail"
    if record.polarity == "positive":
        circ = "pass" if circularity_filter(record.rationale_text, n) else "fail"
    else:
        circ = "not-applied"
    return record.with_verdicts(conclusion, circ)


def filter_and_pair(positives, negatives, samples, iteration: int = 1, n: int = DEFAULT_N):
    """Judge every record and pair the survivors per sample.

    Returns ``(pairs, stats, judged_records)``. A positive that fails the
    conclusion check counts as ``dropped_positive_conclusion`` even if it is
    also circular. With several negatives per sample, each passing negative
    yields its own pair.
    """
    by_id = {s.id: s for s in samples}
    pos_by = {}
    neg_by = {}
    for r in positives:
        if r.polarity != "positive":
            raise ValidationError(f"record for {r.sample_id} in the positive list is {r.polarity}")
        if r.sample_id not in by_id:
            raise ValidationError(f"positive record references unknown sample {r.sample_id!r}")
        if r.sample_id in pos_by:
            raise ValidationError(f"more than one positive record for sample {r.sample_id!r}")
        pos_by[r.sample_id] = r
    for r in negatives:
        if r.polarity != "negative":
            raise ValidationError(f"record for {r.sample_id} in the negative list is {r.polarity}")
        if r.sample_id not in by_id:
            raise ValidationError(f"negative record references unknown sample {r.sample_id!r}")
        neg_by.setdefault(r.sample_id, []).append(r)

    stats = FilterStats()
    pairs = []
    judged = []
    for sample in samples:
        pos = pos_by.get(sample.id)
        negs = neg_by.get(sample.id, [])
        if pos is None and not negs:
            continue
        good_pos = None
        if pos is None:
            stats.missing_positive += 1
        else:
            pos = judge(pos, sample, n)
            judged.append(pos)
            if pos.verdicts["conclusion"] == "fail":
                stats.dropped_positive_conclusion += 1
            elif pos.verdicts["circularity"] == "fail":
                stats.dropped_positive_circularity += 1
            else:
                good_pos = pos
        good_negs = []
        if not negs:
            stats.missing_negative += 1
        for neg in negs:
            neg = judge(neg, sample, n)
            judged.append(neg)
            if neg.verdicts["conclusion"] == "fail":
                stats.dropped_negative_conclusion += 1
            else:
                good_negs.append(neg)
        if good_pos is not None:
            for neg in good_negs:
                pairs.append(PreferencePair.from_records(sample, good_pos, neg, iteration))
                stats.kept += 1
    return pairs, stats, judged
