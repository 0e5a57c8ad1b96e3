"""Command-line entry points.

Subcommands: train (interactive methods, baselines, bc), train-labeler
(flat trainer producing a labeler checkpoint), eval (checkpoint ->
metrics), label-serve (training run with the HTTP labeling service in
human mode), replay-labels (rebuild a label set from JSON-lines), compare
(aggregate run directories into a summary table).

Exit codes: 2 for configuration problems (with the offending config path),
1 for runtime failures, 0 on success.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import qnet
from .buffers import FeedbackBuffer
from .config import RunConfig, load_run_config, validate_run_config
from .exceptions import ConfigurationError, UsageError
from .labelers import build_labeler
from .trainer import (
    METHODS,
    METRICS_COLUMNS,
    TrainerConfig,
    eval_seed,
    evaluate,
    run_bc,
    run_method,
    run_rainbow_lite,
    train_labeler_checkpoint,
)

log = logging.getLogger(__name__)

EVAL_METRICS = ["crash_rate", "distance_avg", "speed_avg",
                "lane_change_ratio", "lane_pos_avg", "steps_avg"]


def _prepare_out_dir(out: str, rc: RunConfig, force: bool) -> str:
    if os.path.isdir(out) and os.listdir(out) and not force:
        raise UsageError(f"output directory {out} is not empty "
                         "(use --force to overwrite)")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w") as f:
        json.dump(rc.snapshot(), f, indent=2, sort_keys=True)
    return out


def _make_labeler(rc: RunConfig, bridge=None):
    if rc.labeler is None:
        return None
    rng = np.random.default_rng(np.random.SeedSequence([rc.seed, 17]))
    env = rc.env_factory()()
    return build_labeler(rc.labeler, env.action_count, rng, bridge=bridge,
                         env_config=rc.env)


def _default_out(rc: RunConfig) -> str:
    return os.path.join("runs", f"{rc.method}-seed{rc.seed}")


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    if args.seed is not None:
        rc.seed = args.seed
    if rc.labeler and rc.labeler.get("type") == "human":
        raise ConfigurationError(
            "config.labeler.type: human labeling runs under the "
            "label-serve subcommand")
    out = _prepare_out_dir(args.out or _default_out(rc), rc, args.force)
    if rc.method == "rainbow_lite":
        total = rc.trainer.total_iters * rc.trainer.rollout_len
        result = run_rainbow_lite(rc.trainer, rc.env_factory(), rc.seed,
                                  total_steps=total, out_dir=out)
    elif rc.method == "bc":
        if not args.labels:
            raise ConfigurationError(
                "config.method: bc needs --labels pointing at a finished "
                "run's labels.jsonl")
        result = run_bc(rc.trainer, rc.env_factory(), rc.seed,
                        labels_path=args.labels, out_dir=out,
                        parent_env_steps=args.parent_env_steps)
    else:
        labeler = _make_labeler(rc)
        result = run_method(rc.method, rc.trainer, rc.env_factory(),
                            labeler, rc.seed, out_dir=out)
    final = result.records[-1]
    print(f"run complete: {out}")
    print(f"  method={rc.method} seed={rc.seed} "
          f"env_steps={final.env_steps} labels={final.labels_total}")
    e = final.eval
    print(f"  crash_rate={e.crash_rate:.3f} speed_avg={e.speed_avg:.2f} "
          f"distance_avg={e.distance_avg:.1f}")
    return 0


def cmd_train_labeler(args) -> int:
    if args.config:
        rc = load_run_config(args.config)
    else:
        rc = validate_run_config({"method": "rainbow_lite",
                                  "env": {"kind": "highway"},
                                  "proxy": "PRExp", "seed": args.seed})
    if args.seed is not None:
        rc.seed = args.seed
    out = _prepare_out_dir(args.out, rc, args.force)
    info = train_labeler_checkpoint(
        rc.trainer, rc.env_factory(), rc.seed, total_steps=args.steps,
        out_dir=out, snapshot_steps=tuple(args.snapshot or ()))
    print(f"labeler checkpoint: {info['checkpoint']}")
    for k in EVAL_METRICS:
        print(f"  {k} {info['metrics'][k]!r}")
    return 0


def cmd_eval(args) -> int:
    if args.run_dir:
        with open(os.path.join(args.run_dir, "config.json")) as f:
            rc = validate_run_config(json.load(f))
        checkpoint = os.path.join(args.run_dir, "checkpoints",
                                  "final.ckpt")
        if rc.method == "rainbow_lite":
            final_tag = rc.trainer.total_iters * rc.trainer.rollout_len
        elif rc.method == "bc":
            final_tag = 1
        else:
            final_tag = rc.trainer.total_iters
        seed = args.seed if args.seed is not None \
            else eval_seed(rc.seed, final_tag)
        episodes = args.episodes or rc.trainer.eval_episodes
    else:
        if not args.checkpoint:
            raise ConfigurationError(
                "eval needs --run-dir or --checkpoint")
        checkpoint = args.checkpoint
        if args.config:
            rc = load_run_config(args.config)
        else:
            # method here only picks the metrics defaults, not a trainer
            rc = validate_run_config({"method": "rainbow_lite",
                                      "env": {"kind": "highway"},
                                      "proxy": "PRExp"})
        seed = args.seed if args.seed is not None else 0
        episodes = args.episodes or 50
    q, meta = qnet.load_checkpoint(checkpoint)
    env = rc.env_factory()()
    if env.action_count != q.action_count or env.obs_dim != q.obs_dim:
        raise ConfigurationError(
            f"checkpoint shape ({q.obs_dim}, {q.action_count}) does not "
            f"match the env ({env.obs_dim}, {env.action_count})")
    summary = evaluate(q, env, episodes, seed, gamma=rc.trainer.gamma)
    for k in EVAL_METRICS:
        print(f"{k} {getattr(summary, k)!r}")
    return 0


def cmd_replay_labels(args) -> int:
    feedback = FeedbackBuffer.load_jsonl(args.labels)
    records = [feedback.record(i) for i in range(feedback.size)]
    digest = hashlib.sha256()
    for rec in records:
        digest.update(json.dumps(rec, sort_keys=True).encode())
    if args.out:
        feedback.append_jsonl(args.out, 0)
    print(f"labels {feedback.size}")
    print(f"digest {digest.hexdigest()}")
    by_source = {}
    for rec in records:
        by_source[rec["source"]] = by_source.get(rec["source"], 0) + 1
    for src, n in sorted(by_source.items()):
        print(f"  {src} {n}")
    return 0


def cmd_compare(args) -> int:
    rows = []
    for run_dir in args.runs:
        with open(os.path.join(run_dir, "config.json")) as f:
            doc = json.load(f)
        path = os.path.join(run_dir, "metrics.csv")
        with open(path) as f:
            header = f.readline().strip().split(",")
            last = None
            for line in f:
                if line.strip():
                    last = line.strip().split(",")
        if last is None:
            raise UsageError(f"{path}: no data rows")
        row = dict(zip(header, last))
        row["method"] = doc.get("method", "icopro")
        row["run"] = run_dir
        rows.append(row)

    metrics = ["env_steps", "labels_total"] + EVAL_METRICS
    by_method = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row)
    lines = [["method", "seeds"] + metrics]
    for method in sorted(by_method):
        group = by_method[method]
        cells = [method, str(len(group))]
        for m in metrics:
            vals = np.array([float(r[m]) for r in group])
            if m in ("env_steps", "labels_total"):
                cells.append(f"{vals.mean():.0f}")
            else:
                cells.append(f"{vals.mean():.3f}+-{vals.std():.3f}")
        lines.append(cells)
    widths = [max(len(row[i]) for row in lines)
              for i in range(len(lines[0]))]
    for row in lines:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    if args.out:
        with open(args.out, "w") as f:
            for row in lines:
                f.write(",".join(row) + "\n")
    return 0


def cmd_label_serve(args) -> int:
    from .labelers import HumanBridgeLabeler
    from .service import LabelService, QueryBridge

    rc = load_run_config(args.config)
    if args.seed is not None:
        rc.seed = args.seed
    if not rc.labeler or rc.labeler.get("type") != "human":
        raise ConfigurationError(
            "config.labeler.type: label-serve needs a human labeler")
    out = _prepare_out_dir(args.out or _default_out(rc), rc, args.force)
    env = rc.env_factory()()
    bridge = QueryBridge(env.action_names,
                         n_cf=rc.labeler.get("n_cf", rc.trainer.n_cf),
                         timeout=args.timeout)
    service = LabelService(bridge, host=args.host, port=args.port,
                           static_root=args.static_root)
    service.start()
    print(f"labeling console endpoint: http://{args.host}:"
          f"{service.port}/api")
    labeler = HumanBridgeLabeler(bridge)
    try:
        result = run_method(rc.method, rc.trainer, rc.env_factory(),
                            labeler, rc.seed, out_dir=out)
    finally:
        service.stop()
    final = result.records[-1]
    print(f"run complete: {out} (labels={final.labels_total})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coproq",
        description="Q-learning from proxy rewards and sparse corrective "
                    "feedback")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training method from a "
                                     "config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--out", default=None, help="run directory")
    p.add_argument("--force", action="store_true",
                   help="allow a non-empty run directory")
    p.add_argument("--labels", default=None,
                   help="labels.jsonl for method bc")
    p.add_argument("--parent-env-steps", type=int, default=0,
                   help="env-step budget the bc label set consumed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-labeler",
                       help="train a labeler checkpoint with the flat "
                            "trainer")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None,
                   help="env/proxy/trainer config (default: highway with "
                        "the dense shaped preset)")
    p.add_argument("--steps", type=int, default=330_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snapshot", type=int, action="append",
                   default=None,
                   help="also save a snapshot at this step (repeatable)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train_labeler)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--run-dir", default=None,
                   help="finished run directory (reproduces its final "
                        "metrics row)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay-labels",
                       help="rebuild a label set from JSON-lines")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", default=None,
                   help="rewrite the canonical JSON-lines here")
    p.set_defaults(func=cmd_replay_labels)

    p = sub.add_parser("compare",
                       help="aggregate run directories into a summary "
                            "table")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", default=None, help="also write CSV here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("label-serve",
                       help="training run with the HTTP labeling service")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--timeout", type=float, default=600.0,
                   help="seconds to wait per segment before counting it "
                        "as a pass")
    p.add_argument("--static-root", default=None,
                   help="serve the built browser console from this "
                        "directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_label_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (UsageError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
