"""Parsing of ``Step k, ...`` structured rationales."""
import re
from dataclasses import dataclass

from .errors import ValidationError

# "Step 3," / "step 3:" / "STEP 3." ; the separator is optional
_MARKER = re.compile(r"(?<![A-Za-z])step\s*(\d+)\s*[,:.)\-]?\s*", re.IGNORECASE)


@dataclass(frozen=True)
class StepParse:
    steps: tuple  # ((index, text), ...)
    final_step: str
    parse_mode: str  # "marker" or "fallback"
    non_contiguous: bool = False

    @property
    def texts(self) -> list:
        return [text for _, text in self.steps]


def parse_steps(rationale_text: str) -> StepParse:
    """Split a rationale on its step markers.

    Markers are accepted only while their numbers strictly increase, so a
    prose mention such as "as in step 1" inside step 2 is kept as text.
    A text without markers is a single fallback step.
    """
    if not rationale_text or not rationale_text.strip():
        raise ValidationError("cannot parse steps of an empty rationale")

    accepted = []
    last = 0
    for m in _MARKER.finditer(rationale_text):
        k = int(m.group(1))
        if k > last:
            accepted.append((k, m.start(), m.end()))
            last = k

    if not accepted:
        text = rationale_text.strip()
        return StepParse(((1, text),), text, "fallback", False)

    steps = []
    for i, (k, _, body_start) in enumerate(accepted):
        end = accepted[i + 1][1] if i + 1 < len(accepted) else len(rationale_text)
        steps.append((k, rationale_text[body_start:end].strip()))
    indices = [k for k, _ in steps]
    non_contiguous = indices != list(range(1, len(indices) + 1))
    return StepParse(tuple(steps), steps[-1][1], "marker", non_contiguous)
