"""Desk-scale preference optimization on a bigram token policy.

The policy scores a response R given a context token c as

    log pi(R | c) = sum_l log softmax(params[prev_l])[R_l],  prev_1 = c

and is trained with the sigmoid preference loss against a frozen copy of
itself. Gradients are exact; the per-token gather/scatter loops run in
``smartloop.kernels``.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import TrainingError, ValidationError

UNK = "<unk>"
LARGE_MODEL_LR = 2e-6  # for multi-billion-parameter policies
LARGE_MODEL_BATCH_SIZE = 128
CHECKPOINT_FORMAT = "smartloop-policy"
CHECKPOINT_VERSION = 1

_TOKEN = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list:
    """Lowercased words, with each punctuation mark as its own token."""
    return _TOKEN.findall(text.lower())


class Vocabulary:
    """Token table: ``<unk>``, then the reserved context tokens, then words."""

    def __init__(self, words, n_context: int = 16):
        if n_context < 1:
            raise ValidationError("need at least one context token")
        self.n_context = n_context
        reserved = [UNK] + [f"<ctx{i}>" for i in range(n_context)]
        words = [w for w in words if w not in reserved]
        if len(set(words)) != len(words):
            raise ValidationError("vocabulary words must be distinct")
        self.tokens = reserved + list(words)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, texts, n_context: int = 16) -> "Vocabulary":
        words = sorted({w for t in texts for w in tokenize(t)})
        return cls(words, n_context)

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens and self.n_context == other.n_context

    def encode(self, text: str) -> list:
        return [self.index.get(w, 0) for w in tokenize(text)]

    def decode(self, ids) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def context_token(self, image_ref: str, question: str) -> int:
        """Stand-in for image+question conditioning: a hashed context slot."""
        h = hashlib.sha256(f"{image_ref}\x00{question}".encode("utf-8")).digest()
        return 1 + int.from_bytes(h[:8], "big") % self.n_context


class ToyPolicy:
    def __init__(self, vocab: Vocabulary, params=None):
        self.vocab = vocab
        V = len(vocab)
        if V < 2:
            raise ValidationError("vocabulary must hold at least 2 tokens")
        if params is None:
            params = np.zeros((V, V))
        params = np.array(params, dtype=np.float64, order="C")
        if params.shape != (V, V):
            raise ValidationError(f"params must be {V}x{V}, got {params.shape}")
        self.params = params

    @property
    def V(self) -> int:
        return len(self.vocab)

    @property
    def frozen(self) -> bool:
        return not self.params.flags.writeable

    def log_probs(self) -> np.ndarray:
        return log_softmax_rows(self.params)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.vocab, self.params.copy())

    def equals(self, other: "ToyPolicy") -> bool:
        return self.vocab == other.vocab and np.array_equal(self.params, other.params)


def log_softmax_rows(params: np.ndarray) -> np.ndarray:
    m = params.max(axis=1, keepdims=True)
    shifted = params - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def snapshot_reference(policy: ToyPolicy) -> ToyPolicy:
    """Independent read-only copy used as the frozen reference."""
    ref = policy.copy()
    ref.params.setflags(write=False)
    return ref


def _check_tokens(tokens, V):
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("token sequence must be a nonempty 1-d list")
    if arr.min() < 0 or arr.max() >= V:
        raise ValidationError(f"token ids must lie in [0, {V})")
    return arr


def sequence_logprob(policy: ToyPolicy, context_token: int, tokens) -> float:
    arr = _check_tokens(tokens, policy.V)
    if not 0 <= context_token < policy.V:
        raise ValidationError("context token out of range")
    offsets = np.array([0, arr.size], dtype=np.int64)
    ctx = np.array([context_token], dtype=np.int64)
    return float(kernels.sequence_logprobs(policy.log_probs(), ctx, arr, offsets)[0])


@dataclass(frozen=True)
class EncodedPair:
    context: int
    chosen: tuple
    rejected: tuple
    pair_id: str = ""


class DpoBatch:
    """Pairs packed as [chosen_0..chosen_n-1, rejected_0..rejected_n-1]."""

    def __init__(self, pairs):
        self.pairs = list(pairs)
        if not self.pairs:
            raise ValidationError("batch must hold at least one pair")
        for p in self.pairs:
            if len(p.chosen) == 0 or len(p.rejected) == 0:
                raise ValidationError(f"pair {p.pair_id!r}: empty token sequence")
        seqs = [p.chosen for p in self.pairs] + [p.rejected for p in self.pairs]
        self.tokens, self.offsets = kernels.pack(seqs)
        ctx = np.array([p.context for p in self.pairs], dtype=np.int64)
        self.context = np.concatenate([ctx, ctx])

    def __len__(self):
        return len(self.pairs)

    def logprobs(self, logp: np.ndarray):
        lp = kernels.sequence_logprobs(logp, self.context, self.tokens, self.offsets)
        n = len(self.pairs)
        return lp[:n], lp[n:]

    def validate_for(self, V: int):
        if self.tokens.size and (self.tokens.min() < 0 or self.tokens.max() >= V):
            raise ValidationError(f"token ids must lie in [0, {V})")
        if self.context.min() < 0 or self.context.max() >= V:
            raise ValidationError("context token out of range")


def _as_batch(batch) -> DpoBatch:
    return batch if isinstance(batch, DpoBatch) else DpoBatch(batch)


def preference_loss(margins) -> np.ndarray:
    """Per-pair -log sigmoid(margin), as softplus(-margin)."""
    return np.logaddexp(0.0, -np.asarray(margins, dtype=np.float64))


def _check_pair(policy, reference):
    if policy.vocab != reference.vocab:
        raise ValidationError("policy and reference must share a vocabulary")


def margins(policy: ToyPolicy, reference: ToyPolicy, batch, beta: float, ref_logps=None) -> np.ndarray:
    """beta * ((log-ratio of chosen) - (log-ratio of rejected)) per pair."""
    _check_pair(policy, reference)
    batch = _as_batch(batch)
    batch.validate_for(policy.V)
    pc, pr = batch.logprobs(policy.log_probs())
    rc, rr = ref_logps if ref_logps is not None else batch.logprobs(reference.log_probs())
    return beta * ((pc - rc) - (pr - rr))


def dpo_loss(policy: ToyPolicy, reference: ToyPolicy, batch, beta: float) -> float:
    """Mean preference loss over the batch."""
    m = margins(policy, reference, batch, beta)
    return float(preference_loss(m).mean())


def _loss_and_grad(policy, batch, beta, ref_logps):
    logp = policy.log_probs()
    pc, pr = batch.logprobs(logp)
    rc, rr = ref_logps
    m = beta * ((pc - rc) - (pr - rr))
    losses = preference_loss(m)
    n = len(batch)
    # d loss_i / d margin_i = -sigmoid(-margin_i)
    s = np.exp(-np.logaddexp(0.0, m))
    w = np.concatenate([-beta * s / n, beta * s / n])
    V = policy.V
    grad = np.zeros((V, V))
    rowmass = np.zeros(V)
    kernels.scatter_bigram(w, batch.context, batch.tokens, batch.offsets, grad, rowmass)
    grad -= rowmass[:, None] * np.exp(logp)
    return float(losses.mean()), grad, m


def dpo_grad(policy: ToyPolicy, reference: ToyPolicy, batch, beta: float) -> np.ndarray:
    """Exact gradient of ``dpo_loss`` with respect to ``policy.params``."""
    _check_pair(policy, reference)
    batch = _as_batch(batch)
    batch.validate_for(policy.V)
    ref_logps = batch.logprobs(reference.log_probs())
    return _loss_and_grad(policy, batch, beta, ref_logps)[1]


def dpo_loss_and_grad(policy, reference, batch, beta):
    _check_pair(policy, reference)
    batch = _as_batch(batch)
    batch.validate_for(policy.V)
    loss, grad, _ = _loss_and_grad(policy, batch, beta, batch.logprobs(reference.log_probs()))
    return loss, grad


@dataclass
class TrainConfig:
    beta: float = 0.1
    lr: float = 1e-2  # desk scale; see LARGE_MODEL_LR
    batch_size: int = 8
    epochs: int = 1

    def __post_init__(self):
        if not self.beta > 0:
            raise ValidationError("beta must be > 0")
        if not self.lr > 0:
            raise ValidationError("lr must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")


@dataclass
class TrainMetrics:
    steps: list = field(default_factory=list)
    initial_loss: float = math.nan
    final_loss: float = math.nan
    initial_mean_margin: float = math.nan
    final_mean_margin: float = math.nan
    final_positive_fraction: float = math.nan

    def summary(self) -> dict:
        return {
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "initial_mean_margin": self.initial_mean_margin,
            "final_mean_margin": self.final_mean_margin,
            "final_positive_fraction": self.final_positive_fraction,
            "steps": len(self.steps),
        }


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def train_epoch(policy: ToyPolicy, reference: ToyPolicy, pairs, config: TrainConfig, rng_seed: int = 0):
    """Plain gradient descent over shuffled mini-batches, cosine-decayed lr.

    Returns a new policy and its metrics; neither argument is modified.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("train_epoch needs at least one pair")
    _check_pair(policy, reference)
    full = DpoBatch(pairs)
    full.validate_for(policy.V)
    ref_full = full.logprobs(reference.log_probs())

    metrics = TrainMetrics()
    m0 = margins(policy, reference, full, config.beta, ref_full)
    metrics.initial_loss = float(preference_loss(m0).mean())
    metrics.initial_mean_margin = float(m0.mean())

    trained = policy.copy()
    gen = np.random.default_rng(rng_seed)
    n = len(pairs)
    per_epoch = math.ceil(n / config.batch_size)
    total = per_epoch * config.epochs
    step = 0
    for _ in range(config.epochs):
        order = gen.permutation(n)
        for b in range(per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch = DpoBatch([pairs[i] for i in idx])
            n_b = len(idx)
            ref_b = (ref_full[0][idx], ref_full[1][idx])
            loss, grad, m = _loss_and_grad(trained, batch, config.beta, ref_b)
            if not (math.isfinite(loss) and np.isfinite(grad).all()):
                raise TrainingError("non-finite loss or gradient", step, [pairs[i].pair_id for i in idx])
            lr = cosine_lr(config.lr, step, total)
            trained.params -= lr * grad
            metrics.steps.append({"step": step, "loss": loss, "mean_margin": float(m.sum() / n_b), "lr": lr})
            step += 1

    m1 = margins(trained, reference, full, config.beta, ref_full)
    metrics.final_loss = float(preference_loss(m1).mean())
    metrics.final_mean_margin = float(m1.mean())
    metrics.final_positive_fraction = float((m1 > 0).mean())
    return trained, metrics


def encode_pair(pair, vocab: Vocabulary) -> EncodedPair:
    """Encode a ``PreferencePair`` for the toy policy."""
    return EncodedPair(
        context=vocab.context_token(pair.image_path, pair.question),
        chosen=tuple(vocab.encode(pair.chosen)),
        rejected=tuple(vocab.encode(pair.rejected)),
        pair_id=pair.sample_id,
    )


def save_checkpoint(policy: ToyPolicy, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "V": policy.V,
        "n_context": policy.vocab.n_context,
        "vocab": policy.vocab.tokens,
        "params": [float(x) for x in policy.params.ravel()],
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, ensure_ascii=False, separators=(",", ":")) + "\n", encoding="utf-8")
    tmp.replace(path)


def load_checkpoint(path) -> ToyPolicy:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a policy checkpoint")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {doc.get('format_version')}")
    n_context = int(doc["n_context"])
    words = doc["vocab"][1 + n_context:]
    vocab = Vocabulary(words, n_context)
    if vocab.tokens != doc["vocab"] or len(vocab) != doc["V"]:
        raise ValidationError(f"{path}: vocabulary listing is inconsistent")
    V = doc["V"]
    params = np.array(doc["params"], dtype=np.float64)
    if params.size != V * V:
        raise ValidationError(f"{path}: expected {V * V} parameters, found {params.size}")
    return ToyPolicy(vocab, params.reshape(V, V))
