"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 ingestion error, 4 numeric or
gradient-check failure, 5 judge/remote failure.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from collections import OrderedDict
from dataclasses import replace

import numpy as np

from .codec import TaskKind, parse_response
from .dataio import (
    atomic_write,
    load_annotations,
    load_predictions,
    write_predictions,
)
from .grpo import GrpoConfig, NumericError, TrainingError, gradient_check, random_instance
from .judge import JudgeConfigError, JudgeError, JudgeKind, ReasoningJudge
from .metrics import IngestionError, compute_report, random_baseline
from .records import Subset
from .rewards import ReferenceTarget, RewardJudgeError, TaskMismatchError, batch_rewards
from .temporal import InvalidIntervalError, TimeInterval

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INGEST = 3
EXIT_NUMERIC = 4
EXIT_JUDGE = 5

GRADCHECK_TOL = 1e-5

log = logging.getLogger("crossview_grpo")


class UsageError(Exception):
    pass


def _fail(code, msg):
    print(f"error: {msg}", file=sys.stderr)
    return code


# --- eval / baseline / stats -------------------------------------------------


def cmd_eval(args):
    anns = load_annotations(args.annotations)
    preds = load_predictions(args.predictions)
    task = None if args.task == "both" else TaskKind(args.task)
    report = compute_report(anns, preds, task)
    table = report.to_table()
    table_path = args.table or os.path.splitext(args.out)[0] + ".txt"
    atomic_write(args.out, report.to_json())
    atomic_write(table_path, table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_baseline(args):
    anns = load_annotations(args.annotations)
    task = TaskKind.VERIFICATION if args.mode == "random-verification" else TaskKind.GROUNDING
    preds = random_baseline(anns, task)
    write_predictions(args.out, preds)
    print(f"wrote {len(preds)} {task.value} predictions to {args.out}")
    return EXIT_OK


def stats_table(anns):
    rows = []
    for subset in Subset:
        pairs = [p for p in anns if p.subset is subset]
        if not pairs:
            continue
        durations = [d for p in pairs for d in p.durations.values()]
        moments = [q.gt_span.length for p in pairs for q in p.queries]
        rows.append(
            (
                subset.value,
                len(pairs),
                len(moments),
                float(np.mean(durations)),
                float(np.mean(moments)) if moments else 0.0,
            )
        )
    out = io.StringIO()
    out.write(f"{'subset':<12}{'pairs':>8}{'queries':>9}{'mean_video_s':>14}{'mean_moment_s':>15}\n")
    for name, n_pairs, n_q, dur, mom in rows:
        out.write(f"{name:<12}{n_pairs:>8}{n_q:>9}{dur:>14.2f}{mom:>15.2f}\n")
    out.write(f"{'total':<12}{sum(r[1] for r in rows):>8}{sum(r[2] for r in rows):>9}\n")
    empty = [s.value for s in Subset if s.value not in {r[0] for r in rows}]
    if empty:
        out.write(f"\nomitted (no pairs): {', '.join(empty)}\n")
    return out.getvalue(), rows


def cmd_stats(args):
    anns = load_annotations(args.annotations)
    text, _ = stats_table(anns)
    sys.stdout.write(text)
    return EXIT_OK


# --- reward ------------------------------------------------------------------


def _build_judge(args):
    if args.judge == "lexical":
        return ReasoningJudge.lexical()
    endpoint = args.judge_endpoint or os.environ.get("JUDGE_ENDPOINT")
    model = args.judge_model or os.environ.get("JUDGE_MODEL")
    if not endpoint or not model:
        raise UsageError("remote judge needs --judge-endpoint/JUDGE_ENDPOINT and --judge-model/JUDGE_MODEL")
    return ReasoningJudge.remote_from_env(
        endpoint=endpoint,
        model_name=model,
        timeout=args.judge_timeout,
        max_retries=args.judge_retries,
        concurrency=max(1, args.jobs),
    )


def _load_jsonl(path, required):
    out, problems = [], []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"line {n}: not valid JSON ({exc.msg})")
                continue
            missing = [k for k in required if k not in obj]
            if missing:
                problems.append(f"line {n}: missing fields {missing}")
                continue
            out.append(obj)
    if problems:
        raise IngestionError(f"{path}:\n  " + "\n  ".join(problems))
    return out


def _reference_from(obj):
    task = TaskKind(obj["task"])
    span = obj.get("gt_span")
    return ReferenceTarget(
        task=task,
        gt_span=TimeInterval(*span) if span is not None else None,
        gt_answer=obj.get("gt_answer"),
        reference_reasoning=obj.get("reference_reasoning") or None,
    )


REWARD_COLUMNS = ("id", "candidate", "task", "parse_status", "r_form", "r_acc", "r_sim", "total", "judge_skipped", "judge")


def cmd_reward(args):
    judge = _build_judge(args)
    responses = _load_jsonl(args.responses, ("id", "response"))
    references = {}
    for obj in _load_jsonl(args.references, ("id", "task")):
        try:
            references[str(obj["id"])] = _reference_from(obj)
        except (ValueError, TypeError) as exc:
            raise IngestionError(f"reference {obj['id']!r}: {exc}")
    groups = OrderedDict()
    for k, obj in enumerate(responses):
        rid = str(obj["id"])
        if rid not in references:
            raise IngestionError(f"response line {k + 1} refers to unknown reference id {rid!r}")
        groups.setdefault(rid, []).append((k, obj))

    rows = [None] * len(responses)
    for rid, items in groups.items():
        ref = references[rid]
        parsed = [parse_response(obj["response"], ref.task) for _, obj in items]
        cand_ids = [f"{rid}#{obj.get('candidate', j)}" for j, (_, obj) in enumerate(items)]
        scored = batch_rewards(parsed, ref, judge, candidate_ids=cand_ids)
        for (k, obj), p, b, cid in zip(items, parsed, scored, cand_ids):
            rows[k] = (
                rid,
                str(obj.get("candidate", cid.split("#", 1)[1])),
                ref.task.value,
                p.parse_status.value,
                repr(b.r_form),
                repr(b.r_acc),
                repr(b.r_sim),
                repr(b.total),
                str(b.judge_skipped).lower(),
                judge.kind.value,
            )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REWARD_COLUMNS)
    w.writerows(rows)
    atomic_write(args.out, buf.getvalue())
    print(f"wrote {len(rows)} reward rows to {args.out}")
    return EXIT_OK


# --- train-demo --------------------------------------------------------------


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _method_list(text):
    from .synthetic import METHODS

    lookup = {m.lower(): m for m in METHODS}
    out = []
    for part in text.split(","):
        key = part.strip().lower().replace("-", "")
        if key not in lookup:
            raise argparse.ArgumentTypeError(f"unknown method {part!r}; choose from {', '.join(METHODS)}")
        out.append(lookup[key])
    return out


def cmd_train_demo(args):
    from .synthetic import EnvConfig, run_comparison

    env_cfg = EnvConfig(
        T=args.duration,
        bins=args.bins,
        ego_noise=args.ego_noise,
        exo_noise=args.exo_noise,
        reasoning_vocab=args.reasoning_vocab,
        episodes=args.episodes,
        eval_episodes=args.eval_episodes,
        seed=args.seed,
    )
    grpo_cfg = GrpoConfig(
        group_size=args.group_size,
        beta=args.beta,
        learning_rate=args.lr,
        iterations=args.iterations,
        seed=args.seed,
        prompts_per_step=args.prompts_per_step,
        clip_epsilon=args.clip_epsilon,
    )
    seeds = args.seeds if args.seeds else [args.seed]

    rng = np.random.default_rng(args.seed)
    inst = random_instance(rng, contexts=2, actions=10, group_size=grpo_cfg.group_size, n_groups=4)
    check = gradient_check(*inst, grpo_cfg)
    gc = {"max_rel_error": check.max_rel_error, "worst_index": list(check.worst_index), "tolerance": GRADCHECK_TOL}
    if not check.max_rel_error < GRADCHECK_TOL:
        raise NumericError(
            f"gradient check failed: relative error {check.max_rel_error:.3e} at parameter {check.worst_index}"
        )

    result = run_comparison(
        env_cfg, methods=args.methods, seeds=seeds, grpo_cfg=grpo_cfg, sft_epochs=args.sft_epochs, sft_lr=args.sft_lr
    )
    out = args.out_dir
    files = {"comparison.csv": result.to_csv(), "gradcheck.json": json.dumps(gc, indent=2, sort_keys=True) + "\n"}
    for (method, seed), curves in sorted(result.curves.items()):
        files[os.path.join("curves", f"{method}_seed{seed}.csv")] = curves.to_csv()
    for seed, losses in sorted(result.sft_losses.items()):
        files[os.path.join("curves", f"SFT_loss_seed{seed}.csv")] = "epoch,nll\n" + "".join(
            f"{i},{x!r}\n" for i, x in enumerate(losses)
        )
    for name, text in files.items():
        atomic_write(os.path.join(out, name), text)
    sys.stdout.write(result.to_csv())
    return EXIT_OK


# --- parser ------------------------------------------------------------------


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    pass


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="increase log verbosity (-vv for debug)")
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument("--jobs", type=int, default=4, help="cap on concurrent workers (judge requests)")

    p = argparse.ArgumentParser(prog="crossview-grpo", description=__doc__, formatter_class=_Formatter)
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, help):
        return sub.add_parser(name, help=help, description=help, parents=[common], formatter_class=_Formatter)

    e = command("eval", "score predictions against annotations")
    e.add_argument("--annotations", required=True, help="annotation JSONL file")
    e.add_argument("--predictions", required=True, help="prediction JSONL file")
    e.add_argument("--task", choices=["verification", "grounding", "both"], default="both", help="task(s) to score")
    e.add_argument("--out", required=True, help="machine-readable report (JSON)")
    e.add_argument("--table", default=None, help="text table path (default: --out with .txt suffix)")
    e.set_defaults(func=cmd_eval)

    b = command("baseline", "write always-yes / entire-span predictions")
    b.add_argument("--annotations", required=True, help="annotation JSONL file")
    b.add_argument("--mode", choices=["random-verification", "random-grounding"], required=True, help="baseline kind")
    b.add_argument("--out", required=True, help="prediction JSONL output")
    b.set_defaults(func=cmd_baseline)

    r = command("reward", "score responses with format + accuracy + similarity rewards")
    r.add_argument("--responses", required=True, help="JSONL with id, response[, candidate]")
    r.add_argument("--references", required=True, help="JSONL with id, task, gt_span|gt_answer[, reference_reasoning]")
    r.add_argument("--judge", choices=["lexical", "remote"], default="lexical", help="similarity judge")
    r.add_argument("--judge-endpoint", default=None, help="chat-completions URL (or JUDGE_ENDPOINT)")
    r.add_argument("--judge-model", default=None, help="judge model name (or JUDGE_MODEL)")
    r.add_argument("--judge-timeout", type=float, default=30.0, help="per-request timeout in seconds")
    r.add_argument("--judge-retries", type=int, default=2, help="retries per request")
    r.add_argument("--out", required=True, help="reward table (CSV)")
    r.set_defaults(func=cmd_reward)

    t = command("train-demo", "SFT vs GRPO vs View-GRPO on the synthetic two-view environment")
    t.add_argument("--out-dir", required=True, help="directory for tables and curves")
    t.add_argument("--methods", type=_method_list, default=["SFT", "GRPO", "ViewGRPO"], help="comma-separated methods")
    t.add_argument("--seeds", type=_int_list, default=None, help="comma-separated seeds (default: --seed)")
    t.add_argument("--duration", type=float, default=100.0, help="timeline length T in seconds")
    t.add_argument("--bins", type=int, default=20, help="timeline bins")
    t.add_argument("--ego-noise", type=float, default=0.1, help="ego cue corruption probability")
    t.add_argument("--exo-noise", type=float, default=0.25, help="exo cue corruption probability")
    t.add_argument("--reasoning-vocab", type=int, default=8, help="number of reasoning templates")
    t.add_argument("--episodes", type=int, default=2000, help="training episodes")
    t.add_argument("--eval-episodes", type=int, default=500, help="held-out episodes")
    t.add_argument("--iterations", type=int, default=500, help="GRPO iterations")
    t.add_argument("--group-size", type=int, default=8, help="candidates per prompt (G)")
    t.add_argument("--beta", type=float, default=0.04, help="KL penalty weight")
    t.add_argument("--lr", type=float, default=1.0, help="GRPO learning rate")
    t.add_argument("--prompts-per-step", type=int, default=32, help="prompts (groups) per GRPO step")
    t.add_argument("--clip-epsilon", type=float, default=None, help="ratio clipping epsilon; unset means no clipping")
    t.add_argument("--sft-epochs", type=int, default=20, help="SFT epochs")
    t.add_argument("--sft-lr", type=float, default=5.0, help="SFT learning rate")
    t.set_defaults(func=cmd_train_demo)

    s = command("stats", "per-subset counts and mean lengths")
    s.add_argument("--annotations", required=True, help="annotation JSONL file")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, JudgeConfigError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    except (IngestionError, InvalidIntervalError, TaskMismatchError) as exc:
        return _fail(EXIT_INGEST, str(exc))
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _fail(EXIT_INGEST, str(exc))
    except (RewardJudgeError, JudgeError) as exc:
        endpoint = getattr(args, "judge_endpoint", None) or os.environ.get("JUDGE_ENDPOINT", "")
        return _fail(EXIT_JUDGE, f"judge endpoint {endpoint}: {exc}")
    except TrainingError as exc:
        if isinstance(exc.__cause__, (RewardJudgeError, JudgeError)):
            return _fail(EXIT_JUDGE, str(exc))
        return _fail(EXIT_NUMERIC, str(exc))
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, str(exc))


if __name__ == "__main__":
    sys.exit(main())
