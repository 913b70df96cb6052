"""The generate -> filter -> train loop and its on-disk state.

Run directory layout::

    run_dir/
      config.cfg          canonical copy of the run config
      state.json          IterationState (versioned, replaced atomically)
      .lock               advisory lock held while a process drives the run
      iter_001/
        records.jsonl     judged rationale records
        pairs.jsonl       preference pairs
        filter_stats.json
        generation.json   backend outcome counts
        checkpoint.json   trained policy
        train_metrics.jsonl
        eval.jsonl
"""
from __future__ import annotations

import fcntl
import json
import logging
import os
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from . import dpo
from .augment import load_image
from .config import RunConfig
from .dataset import (
    McSample,
    Provenance,
    RationaleRecord,
    read_manifest,
    resolve_image_path,
    sample_pool,
    write_pairs,
    write_records,
)
from .errors import ProtocolError, SmartLoopError, TransportError, ValidationError
from .evaluate import PolicyResponder, evaluate, write_report
from .filters import filter_and_pair
from .gateway import generate_batch, make_backend
from .prompts import make_request
from .seeding import subseed

log = logging.getLogger(__name__)

STATE_VERSION = 1


@dataclass
class IterationState:
    iteration: int = 1
    used_sample_ids: list = field(default_factory=list)
    policy_checkpoint: str | None = None
    metrics_history: list = field(default_factory=list)
    config_fingerprint: str = ""
    seed: int = 0
    stopped: str | None = None

    def to_dict(self) -> dict:
        return {
            "format_version": STATE_VERSION,
            "iteration": self.iteration,
            "used_sample_ids": sorted(self.used_sample_ids),
            "policy_checkpoint": self.policy_checkpoint,
            "metrics_history": self.metrics_history,
            "config_fingerprint": self.config_fingerprint,
            "seed": self.seed,
            "stopped": self.stopped,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationState":
        if d.get("format_version") != STATE_VERSION:
            raise ValidationError(f"unsupported state version {d.get('format_version')}")
        return cls(
            iteration=d["iteration"],
            used_sample_ids=list(d["used_sample_ids"]),
            policy_checkpoint=d["policy_checkpoint"],
            metrics_history=list(d["metrics_history"]),
            config_fingerprint=d["config_fingerprint"],
            seed=d["seed"],
            stopped=d.get("stopped"),
        )


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_state(state: IterationState, run_dir) -> None:
    _atomic_write(Path(run_dir) / "state.json", json.dumps(state.to_dict(), indent=2, sort_keys=True) + "\n")


def load_state(run_dir) -> IterationState | None:
    p = Path(run_dir) / "state.json"
    if not p.exists():
        return None
    return IterationState.from_dict(json.loads(p.read_text(encoding="utf-8")))


@contextmanager
def run_lock(run_dir):
    path = Path(run_dir) / ".lock"
    with open(path, "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise SmartLoopError(f"{run_dir} is in use by another process") from None
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


class ImageCache:
    def __init__(self, base_dir):
        self.base_dir = Path(base_dir)
        self._cache = {}

    def __call__(self, sample: McSample):
        if sample.id not in self._cache:
            self._cache[sample.id] = load_image(resolve_image_path(sample, self.base_dir))
        return self._cache[sample.id]


def build_requests(pool, config: RunConfig, seed: int, iteration: int, images):
    """Positive and negative AoT requests for every pool sample."""
    decoding = config.decoding()
    reqs = []
    for s in pool:
        img = images(s)
        reqs.append(make_request(s, "positive", img, None, decoding, subseed(seed, iteration, s.id, "positive")))
        for j in range(config.negatives_per_sample):
            desc = config.augmentation(subseed(seed, iteration, s.id, "augment", j))
            reqs.append(make_request(s, "negative", img, desc, decoding, subseed(seed, iteration, s.id, "negative", j)))
    return reqs


def generate_records(pool, config: RunConfig, seed: int, iteration: int, images, backend=None):
    """Run generation for a pool; returns (records, outcome counts).

    Empty completions are dropped and counted. Transport and protocol
    failures abort with the first error.
    """
    bcfg = config.backend()
    requests = build_requests(pool, config, seed, iteration, images)
    results = generate_batch(requests, bcfg, backend=backend)
    fatal = [r for r in results if not r.ok and r.error_kind in ("transport", "protocol")]
    if fatal:
        cls = TransportError if fatal[0].error_kind == "transport" else ProtocolError
        raise cls(f"{len(fatal)} of {len(results)} requests failed; first: {fatal[0].error}", fatal[0].fingerprint)
    records = []
    for req, res in zip(requests, results):
        if not res.ok:
            continue
        prov = Provenance(
            prompt_kind=req.prompt_kind,
            backend_id=bcfg.backend_id,
            temperature=req.decoding.temperature,
            top_p=req.decoding.top_p,
            rng_seed=req.rng_seed,
            augmentation=req.augmentation.to_dict() if req.augmentation else None,
            fingerprint=res.fingerprint,
        )
        records.append(RationaleRecord(req.sample_id, req.polarity, req.target_answer, res.rationale_text, prov))
    return records, dict(results.counts)


def initial_policy(samples, pairs, n_context: int) -> dpo.ToyPolicy:
    texts = [PolicyResponder.template]
    for s in samples:
        texts.append(s.question)
        texts.extend(c.render() for c in s.choices)
    for p in pairs:
        texts.extend([p.chosen, p.rejected])
    return dpo.ToyPolicy(dpo.Vocabulary.build(texts, n_context))


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def run_iteration(state: IterationState, samples, config: RunConfig, run_dir, backend=None,
                  eval_samples=None, images=None, eval_images=None) -> IterationState:
    """Execute one iteration and persist the new state.

    Artifacts are written to a scratch directory that is renamed into place
    only after every stage has succeeded; the state file is replaced last.
    """
    run_dir = Path(run_dir)
    k = state.iteration
    seed = state.seed
    samples = list(samples)
    eval_samples = list(eval_samples) if eval_samples is not None else samples
    if images is None:
        manifest = config.path("data.manifest")
        images = ImageCache(manifest.parent if manifest else config.base_dir)
    eval_images = eval_images or images
    if backend is None:
        backend = make_backend(config.backend())

    pool = sample_pool(samples, config.M, k, state.used_sample_ids, seed)
    records, gen_counts = generate_records(pool, config, seed, k, images, backend)
    positives = [r for r in records if r.polarity == "positive"]
    negatives = [r for r in records if r.polarity == "negative"]
    pairs, stats, judged = filter_and_pair(positives, negatives, pool, k, config.filter_n)
    if len(pairs) < config.M:
        log.info("iteration %d: %d pairs survived filtering for a pool of %d", k, len(pairs), config.M)

    if state.policy_checkpoint:
        policy = dpo.load_checkpoint(run_dir / state.policy_checkpoint)
    else:
        policy = initial_policy(samples + eval_samples, pairs, config.context_tokens)
    reference = dpo.snapshot_reference(policy)
    tm = None
    if pairs:
        encoded = [dpo.encode_pair(p, policy.vocab) for p in pairs]
        policy, tm = dpo.train_epoch(policy, reference, encoded, config.train(), subseed(seed, k, "train"))
    else:
        log.warning("iteration %d: no pairs survived filtering; policy left unchanged", k)

    if config.eval_target == "policy":
        report = evaluate(policy, eval_samples)
    else:
        report = evaluate(backend, eval_samples, decoding=config.decoding(), config=config.backend(),
                          image_loader=eval_images, rng_seed=subseed(seed, k, "eval"))

    name = f"iter_{k:03d}"
    final_dir = run_dir / name
    scratch = run_dir / f".{name}.partial"
    if scratch.exists():
        shutil.rmtree(scratch)
    scratch.mkdir(parents=True)
    write_records(judged, scratch / "records.jsonl")
    write_pairs(pairs, scratch / "pairs.jsonl")
    (scratch / "filter_stats.json").write_text(json.dumps(stats.to_dict()) + "\n", encoding="utf-8")
    (scratch / "generation.json").write_text(json.dumps(gen_counts, sort_keys=True) + "\n", encoding="utf-8")
    dpo.save_checkpoint(policy, scratch / "checkpoint.json")
    _write_jsonl(scratch / "train_metrics.jsonl", tm.steps if tm else [])
    write_report(report, scratch / "eval.jsonl")
    if final_dir.exists():
        shutil.rmtree(final_dir)  # leftover from an interrupted attempt
    os.replace(scratch, final_dir)

    entry = {
        "iteration": k,
        "pool_size": len(pool),
        "pairs_kept": len(pairs),
        "shortfall": config.M - len(pairs),
        "filter_stats": stats.to_dict(),
        "generation": gen_counts,
        "initial_loss": tm.initial_loss if tm else None,
        "final_loss": tm.final_loss if tm else None,
        "mean_margin": tm.final_mean_margin if tm else None,
        "positive_margin_fraction": tm.final_positive_fraction if tm else None,
        "eval_accuracy": report.accuracy,
    }
    new_state = IterationState(
        iteration=k + 1,
        used_sample_ids=sorted(set(state.used_sample_ids) | {s.id for s in pool}),
        policy_checkpoint=f"{name}/checkpoint.json",
        metrics_history=state.metrics_history + [entry],
        config_fingerprint=state.config_fingerprint,
        seed=seed,
    )
    save_state(new_state, run_dir)
    return new_state


def run_loop(samples, K: int, config: RunConfig, run_dir, seed: int = 0, backend=None,
             eval_samples=None, images=None, eval_images=None) -> IterationState:
    """Run (or resume) iterations until ``K`` are complete or accuracy plateaus."""
    if K < 1:
        raise ValidationError("K must be >= 1")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    fp = config.fingerprint()
    with run_lock(run_dir):
        state = load_state(run_dir)
        if state is None:
            state = IterationState(config_fingerprint=fp, seed=seed)
            _atomic_write(run_dir / "config.cfg", config.text())
            save_state(state, run_dir)
        elif state.config_fingerprint != fp or state.seed != seed:
            raise ValidationError(f"{run_dir} holds a run with a different config or seed")
        if backend is None:
            backend = make_backend(config.backend())
        eps = config.early_stop_epsilon
        while state.iteration <= K and state.stopped is None:
            try:
                state = run_iteration(state, samples, config, run_dir, backend, eval_samples, images, eval_images)
            except (SmartLoopError, OSError) as exc:
                exc.completed_iterations = state.iteration - 1
                raise
            hist = state.metrics_history
            if eps is not None and len(hist) >= 2:
                gain = hist[-1]["eval_accuracy"] - hist[-2]["eval_accuracy"]
                if gain <= eps:
                    state.stopped = f"accuracy plateau after iteration {hist[-1]['iteration']}"
                    save_state(state, run_dir)
    return state


def run_from_config(config: RunConfig, seed: int, run_dir=None, backend=None) -> IterationState:
    manifest = config.path("data.manifest")
    if manifest is None:
        raise ValidationError("config needs data.manifest")
    samples = read_manifest(manifest)
    eval_path = config.path("eval.manifest")
    eval_samples = read_manifest(eval_path) if eval_path else samples
    images = ImageCache(manifest.parent)
    eval_images = ImageCache(eval_path.parent) if eval_path else images
    run_dir = Path(run_dir) if run_dir else config.path("loop.run_dir")
    return run_loop(samples, config.K, config, run_dir, seed, backend, eval_samples, images, eval_images)
