import json

import pytest
from hypothesis import given, settings, strategies as st

from smartloop.dataset import (
    Choice, McSample, PreferencePair, Provenance, RationaleRecord, read_manifest, read_pairs, read_records,
    sample_pool, validate_record, write_manifest, write_pairs, write_records,
)
from smartloop.errors import InsufficientSamplesError, ManifestError, ValidationError

text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=20)


@st.composite
def samples(draw):
    n = draw(st.integers(2, 5))
    texts = draw(st.lists(text, min_size=n, max_size=n, unique=True))
    choices = tuple(Choice(f"({chr(65 + i)})", t) for i, t in enumerate(texts))
    k = draw(st.integers(0, n - 1))
    q = draw(text.filter(lambda s: s.strip()))
    sid = draw(st.from_regex(r"[a-z0-9]{1,8}", fullmatch=True))
    return McSample(sid, f"img/{sid}.png", q, choices, choices[k], choices[:k] + choices[k + 1:])


@settings(max_examples=50, deadline=None)
@given(st.lists(samples(), min_size=1, max_size=5, unique_by=lambda s: s.id))
def test_manifest_roundtrip(tmp_path_factory, items):
    p = tmp_path_factory.mktemp("m") / "m.jsonl"
    write_manifest(items, p)
    back = read_manifest(p)
    assert back == items
    first = p.read_bytes()
    write_manifest(back, p)
    assert p.read_bytes() == first


def test_validate_catches_bad_samples(sample):
    a, b, c = sample.choices
    bad = [
        McSample("", "x.png", "q", (a, b), a, (b,)),
        McSample("x", "x.png", "  ", (a, b), a, (b,)),
        McSample("x", "x.png", "q", (a,), a, ()),
        McSample("x", "x.png", "q", (a, b), Choice("(Z)", "z"), (b,)),
        McSample("x", "x.png", "q", (a, b), a, ()),
        McSample("x", "x.png", "q", (a, b), a, (a, b)),
        McSample("x", "x.png", "q", (a, b, c), a, (b,)),
        McSample("x", "x.png", "q", (a, a), a, (a,)),
    ]
    for s in bad:
        with pytest.raises(ValidationError):
            s.validate()
    sample.validate()


def test_manifest_errors_name_line_and_field(tmp_path, sample):
    p = tmp_path / "m.jsonl"
    good = json.dumps(sample.to_dict())
    p.write_text(good + "\n{not json\n", encoding="utf-8")
    with pytest.raises(ManifestError) as ei:
        read_manifest(p)
    assert ei.value.line == 2
    d = sample.to_dict()
    del d["question"]
    p.write_text(good + "\n" + json.dumps(d) + "\n", encoding="utf-8")
    with pytest.raises(ManifestError) as ei:
        read_manifest(p)
    assert ei.value.line == 2 and ei.value.field == "question"
    p.write_text(good + "\n" + good + "\n", encoding="utf-8")
    with pytest.raises(ValidationError, match="duplicate sample id"):
        read_manifest(p)


def _record(sample, polarity="positive", text="Step 1, add. Step 2, (B) 4."):
    target = sample.correct if polarity == "positive" else sample.incorrect[0]
    return RationaleRecord(sample.id, polarity, target, text, Provenance("AoT", "mock:m", 0.7, 0.9, 3, None, "ab"))


def test_record_roundtrip_and_steps(tmp_path, sample):
    r = _record(sample)
    assert r.steps == ("add.", "(B) 4.")
    write_records([r, _record(sample, "negative", "café ünïcode")], tmp_path / "r.jsonl")
    back = read_records(tmp_path / "r.jsonl")
    assert back[0] == r and back[1].rationale_text == "café ünïcode"
    assert "café" in (tmp_path / "r.jsonl").read_text(encoding="utf-8")


def test_record_invariants(sample):
    with pytest.raises(ValidationError):
        RationaleRecord(sample.id, "neutral", sample.correct, "x", Provenance("AoT", "m", 0.7, 0.9, 0))
    with pytest.raises(ValidationError):
        RationaleRecord(sample.id, "positive", sample.correct, "Step 1, x", Provenance("AoT", "m", 0.7, 0.9, 0),
                        steps=("y",))
    with pytest.raises(ValidationError):
        validate_record(RationaleRecord(sample.id, "positive", sample.incorrect[0], "x",
                                        Provenance("AoT", "m", 0.7, 0.9, 0)), sample)
    with pytest.raises(ValidationError):
        validate_record(RationaleRecord(sample.id, "negative", sample.correct, "x",
                                        Provenance("AoT", "m", 0.7, 0.9, 0)), sample)


def test_pair_roundtrip_and_refusal(tmp_path, sample):
    pos = _record(sample).with_verdicts("pass", "pass")
    neg = _record(sample, "negative", "Step 1, (A) 3.").with_verdicts("pass", "not-applied")
    pair = PreferencePair.from_records(sample, pos, neg, 1)
    write_pairs([pair], tmp_path / "p.jsonl")
    assert read_pairs(tmp_path / "p.jsonl") == [pair]
    bad = PreferencePair.from_records(sample, pos.with_verdicts("fail", "pass"), neg, 1)
    with pytest.raises(ValidationError):
        write_pairs([pair, bad], tmp_path / "q.jsonl")
    assert not (tmp_path / "q.jsonl").exists()


def test_sample_pool(fixture_samples):
    a = sample_pool(fixture_samples, 5, 1, [], 7)
    assert a == sample_pool(fixture_samples, 5, 1, [], 7)
    b = sample_pool(fixture_samples, 5, 2, [s.id for s in a], 7)
    assert not {s.id for s in a} & {s.id for s in b}
    assert len({s.id for s in a}) == 5
    with pytest.raises(InsufficientSamplesError, match="short by 2"):
        sample_pool(fixture_samples, 7, 3, [s.id for s in fixture_samples[:15]], 7)
