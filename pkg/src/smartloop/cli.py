"""Command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 transport error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dpo
from .config import RunConfig
from .dataset import read_manifest, read_pairs, read_records, sample_pool, write_pairs, write_records
from .errors import GenerationError, SmartLoopError, TrainingError, ValidationError
from .evaluate import evaluate, write_report
from .filters import filter_and_pair
from .gateway import make_backend
from .orchestrator import ImageCache, generate_records, initial_policy, run_from_config
from .seeding import subseed


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _common(p):
    p.add_argument("--config", type=Path, help="flat key = value run config")
    p.add_argument("--seed", type=int, default=0, help="run seed (u64)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smartloop", description="AoT preference data generation and desk-scale iterative DPO")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="pool + prompts + backend -> rationale records")
    _common(g)
    g.add_argument("--manifest", type=Path)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--iteration", type=int, default=1)
    g.add_argument("--m", type=int, help="pool size (defaults to loop.M)")
    g.add_argument("--used-ids", type=Path, help="file with one used sample id per line")

    f = sub.add_parser("filter", help="records -> preference pairs + stats")
    _common(f)
    f.add_argument("--records", type=Path, required=True)
    f.add_argument("--manifest", type=Path)
    f.add_argument("--out", type=Path, required=True)
    f.add_argument("--stats", type=Path)
    f.add_argument("--iteration", type=int, default=1)

    t = sub.add_parser("train", help="pairs -> policy checkpoint + metrics")
    _common(t)
    t.add_argument("--pairs", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--init", type=Path, help="checkpoint to start from")
    t.add_argument("--metrics", type=Path)

    e = sub.add_parser("eval", help="checkpoint or backend -> accuracy report")
    _common(e)
    e.add_argument("--manifest", type=Path)
    e.add_argument("--checkpoint", type=Path, help="evaluate this policy (default: the configured backend)")
    e.add_argument("--out", type=Path)

    it = sub.add_parser("iterate", help="run the full loop")
    _common(it)
    it.add_argument("--run-dir", type=Path)

    ins = sub.add_parser("inspect", help="pretty-print a record file")
    _common(ins)
    ins.add_argument("path", type=Path)
    return parser


def _config(args) -> RunConfig:
    return RunConfig.load(args.config) if args.config else RunConfig.from_values({}, Path.cwd())


def _manifest(args, cfg):
    path = args.manifest or cfg.path("data.manifest")
    if path is None:
        raise ValidationError("no manifest given (use --manifest or data.manifest)")
    return path


def cmd_generate(args):
    cfg = _config(args)
    mpath = _manifest(args, cfg)
    samples = read_manifest(mpath)
    used = []
    if args.used_ids:
        used = [x.strip() for x in args.used_ids.read_text(encoding="utf-8").splitlines() if x.strip()]
    m = args.m if args.m is not None else cfg.M
    pool = sample_pool(samples, m, args.iteration, used, args.seed)
    records, counts = generate_records(pool, cfg, args.seed, args.iteration, ImageCache(mpath.parent))
    write_records(records, args.out)
    print(json.dumps({"records": len(records), **counts}, sort_keys=True))


def cmd_filter(args):
    cfg = _config(args)
    samples = read_manifest(_manifest(args, cfg))
    records = read_records(args.records)
    ids = {r.sample_id for r in records}
    pool = [s for s in samples if s.id in ids]
    pos = [r for r in records if r.polarity == "positive"]
    neg = [r for r in records if r.polarity == "negative"]
    pairs, stats, _ = filter_and_pair(pos, neg, pool, args.iteration, cfg.filter_n)
    write_pairs(pairs, args.out)
    if args.stats:
        args.stats.write_text(json.dumps(stats.to_dict()) + "\n", encoding="utf-8")
    print(json.dumps(stats.to_dict()))


def cmd_train(args):
    cfg = _config(args)
    pairs = read_pairs(args.pairs)
    if not pairs:
        raise ValidationError(f"{args.pairs} holds no pairs")
    if args.init:
        policy = dpo.load_checkpoint(args.init)
    else:
        policy = initial_policy([], pairs, cfg.context_tokens)
    reference = dpo.snapshot_reference(policy)
    encoded = [dpo.encode_pair(p, policy.vocab) for p in pairs]
    trained, metrics = dpo.train_epoch(policy, reference, encoded, cfg.train(), subseed(args.seed, "train"))
    dpo.save_checkpoint(trained, args.out)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8", newline="\n") as fh:
            for row in metrics.steps:
                fh.write(json.dumps(row) + "\n")
    print(json.dumps(metrics.summary()))


def cmd_eval(args):
    cfg = _config(args)
    mpath = _manifest(args, cfg)
    samples = read_manifest(mpath)
    if args.checkpoint:
        report = evaluate(dpo.load_checkpoint(args.checkpoint), samples)
    else:
        bcfg = cfg.backend()
        report = evaluate(make_backend(bcfg), samples, decoding=cfg.decoding(), config=bcfg,
                          image_loader=ImageCache(mpath.parent), rng_seed=subseed(args.seed, "eval"))
    if args.out:
        write_report(report, args.out)
    print(f"accuracy {report.accuracy:.4f} ({report.correct}/{report.total})")


def cmd_iterate(args):
    cfg = _config(args)
    state = run_from_config(cfg, args.seed, args.run_dir)
    for m in state.metrics_history:
        print(f"iteration {m['iteration']}: pairs {m['pairs_kept']}/{m['pool_size']} "
              f"final_loss {m['final_loss']} eval_accuracy {m['eval_accuracy']:.4f}")
    if state.stopped:
        print(state.stopped)


def _describe(obj) -> str:
    if "chosen" in obj and "rejected" in obj:
        lines = [f"pair {obj['sample_id']} (iteration {obj['iteration']})", f"  Q: {obj['question']}",
                 f"  chosen:   {obj['chosen']}", f"  rejected: {obj['rejected']}"]
    elif "rationale_text" in obj:
        t = obj["target_answer"]
        v = obj["verdicts"]
        lines = [f"{obj['polarity']} record {obj['sample_id']} -> {t['label']} {t['text']}",
                 f"  verdicts: conclusion={v['conclusion']} circularity={v['circularity']}"]
        lines += [f"  step {i}: {s}" for i, s in enumerate(obj["steps"], 1)]
    elif "correct" in obj and "choices" in obj:
        choices = " ".join(f"{c['label']} {c['text']}" for c in obj["choices"])
        lines = [f"sample {obj['id']}: {obj['question']}", f"  choices: {choices}",
                 f"  correct: {obj['correct']['label']}"]
    else:
        lines = [json.dumps(obj, indent=2, ensure_ascii=False)]
    return "\n".join(lines)


def cmd_inspect(args):
    text = args.path.read_text(encoding="utf-8")
    try:
        objs = [json.loads(text)]
    except json.JSONDecodeError:
        objs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                objs.append(json.loads(line))
            except json.JSONDecodeError:
                raise ValidationError(f"{args.path}:{lineno}: malformed JSON") from None
    for obj in objs:
        if isinstance(obj, dict) and obj.get("format") == dpo.CHECKPOINT_FORMAT:
            print(f"policy checkpoint: V={obj['V']} context_tokens={obj['n_context']}")
        else:
            print(_describe(obj) if isinstance(obj, dict) else json.dumps(obj))


COMMANDS = {
    "generate": cmd_generate,
    "filter": cmd_filter,
    "train": cmd_train,
    "eval": cmd_eval,
    "iterate": cmd_iterate,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, TrainingError, SmartLoopError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
