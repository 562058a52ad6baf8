"""Command line entry point: ``cropcall {simulate,curate,train,eval,report}``.

Exit codes: 0 success, 1 internal error, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import sim_env
from .clients import API_KEY_ENV, HttpChatClient, MockChatClient, load_fixtures
from .config import ConfigError, RunConfig, load_config, require
from .curation import Clients, read_samples, run_pipeline, summarize, write_records
from .geometry import InvalidInputError
from .experiment import fit_reference, run_grpo
from .grpo import ACTIONS, NO_CALL, Policy, PolicyLoadError, history_jsonl
from .metrics import CdpReport, eval_report, format_table
from .reward import HR

log = logging.getLogger("cropcall")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.env = dataclasses.replace(cfg.env, seed=args.seed)
    return cfg


def cmd_simulate(args) -> int:
    cfg = _config(args)
    rng = np.random.default_rng(cfg.env.seed)
    episodes = [sim_env.gen_episode(cfg.env, rng) for _ in range(args.episodes)]
    rows = sim_env.export_samples(episodes)
    out = _out_dir(args)
    _write(out / "samples.jsonl", "".join(json.dumps(r) + "\n" for r in rows))
    print(f"wrote {len(rows)} samples to {out / 'samples.jsonl'}")
    return EXIT_OK


def _clients(args, cfg: RunConfig) -> Clients:
    cur = cfg.curation
    if args.mock_fixtures:
        replies = load_fixtures(args.mock_fixtures)
        return Clients(MockChatClient(cur.vlm_model, replies), MockChatClient(cur.judge_model, replies),
                       MockChatClient(cur.oracle_model, replies))
    eps = dict(cfg.endpoints)
    if args.endpoint:
        eps = {k: args.endpoint for k in ("vlm", "judge", "oracle")}
    key = os.environ.get(API_KEY_ENV)
    vlm = HttpChatClient(require(eps, "vlm", "endpoints"), cur.vlm_model, key)
    judge = None
    if cur.labeler == "judge":
        judge = HttpChatClient(require(eps, "judge", "endpoints"), cur.judge_model, key)
    oracle = HttpChatClient(require(eps, "oracle", "endpoints"), cur.oracle_model, key)
    return Clients(vlm, judge, oracle)


def cmd_curate(args) -> int:
    cfg = _config(args)
    if args.labeler:
        cfg.curation = dataclasses.replace(cfg.curation, labeler=args.labeler)
    if args.concurrency:
        cfg.curation = dataclasses.replace(cfg.curation, concurrency=args.concurrency)
    try:
        samples = read_samples(args.dataset)
    except (OSError, ValueError, KeyError) as e:
        raise UsageError(f"cannot read dataset {args.dataset}: {e}") from e
    clients = _clients(args, cfg)
    out = _out_dir(args)
    tmp = out / "records.jsonl.partial"
    with tmp.open("w", encoding="utf-8") as fh:
        results = write_records(run_pipeline(samples, clients, cfg.curation), fh)
    tmp.replace(out / "records.jsonl")
    summary = summarize(results)
    _write(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    print(json.dumps({k: summary[k] for k in ("n_input", "n_records", "labels")}))
    return EXIT_OK


def _sft_rows_from_files(records_path: str, samples_path: str):
    """Join curated records with simulator features exported alongside the samples."""
    feats = {}
    with open(samples_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                if "sim" not in row:
                    raise UsageError(f"sample {row.get('sample_id')} has no 'sim' feature block")
                feats[row["sample_id"]] = row["sim"]["features"]
    rows, skipped = [], 0
    with open(records_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            target = rec.get("target_crops", [])
            if rec["label"] == HR and len(target) != 1:
                skipped += 1
                continue
            a = NO_CALL if rec["label"] != HR else ACTIONS.index(target[0])
            rows.append((np.asarray(feats[rec["sample_id"]], dtype=float), a))
    if skipped:
        log.warning("skipped %d multi-crop records (toy policy has singleton actions only)", skipped)
    return rows


def cmd_train(args) -> int:
    cfg = _config(args)
    seed = cfg.env.seed
    out = _out_dir(args)

    if args.stage in ("sft-only", "full"):
        rows = None
        if args.sft_records:
            if not args.sft_samples:
                raise UsageError("--sft-records needs --sft-samples for the feature block")
            rows = _sft_rows_from_files(args.sft_records, args.sft_samples)
        ref = fit_reference(cfg, seed, rows)
        if not np.all(np.isfinite(ref.weights)):
            log.error("SFT diverged (non-finite weights); lower sft.lr")
            return EXIT_INTERNAL
        _write(out / "policy_ref.json", ref.to_json())
        if args.stage == "sft-only":
            print(f"wrote {out / 'policy_ref.json'}")
            return EXIT_OK
    else:
        if args.init:
            ref = _load_policy(args.init)
        else:
            ref = Policy.zeros(sim_env.N_FEATURES, sim_env.FEATURE_NAMES)

    try:
        policy, history = run_grpo(cfg, ref, seed)
    except FloatingPointError as e:
        log.error("GRPO diverged: %s", e)
        return EXIT_INTERNAL
    if not all(math.isfinite(h["mean_reward"]) and math.isfinite(h["kl"]) for h in history):
        log.error("GRPO produced non-finite statistics")
        return EXIT_INTERNAL
    _write(out / "policy.json", policy.to_json())
    _write(out / "history.jsonl", history_jsonl(history))
    first, last = history[0], history[-1]
    print(f"call rate {first['call_rate']:.3f} -> {last['call_rate']:.3f}, "
          f"rtr {first['rtr']:.3f} -> {last['rtr']:.3f}")
    return EXIT_OK


def _load_policy(path: str) -> Policy:
    try:
        return Policy.from_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise UsageError(f"cannot read policy {path}: {e}") from e


BUILTINS = {"oracle": sim_env.oracle_chooser, "never-call": sim_env.never_call,
            "always-all": sim_env.always_all}


def cmd_eval(args) -> int:
    cfg = _config(args)
    if args.builtin:
        choose, name = BUILTINS[args.builtin], args.builtin
    elif args.policy:
        policy = _load_policy(args.policy)
        if policy.feature_names != sim_env.FEATURE_NAMES:
            raise PolicyLoadError("policy feature schema does not match the simulator")
        choose, name = sim_env.policy_chooser(policy, greedy=cfg.eval.greedy), Path(args.policy).stem
    else:
        raise UsageError("eval needs --policy PATH or --builtin NAME")
    n = args.episodes or cfg.eval.episodes
    # held-out stream: offset the seed away from training streams
    records = sim_env.rollout_records(cfg.env, choose, n, seed=cfg.env.seed + 10_000)
    report = eval_report(records)
    out = _out_dir(args)
    _write(out / f"eval_{name}.json", report.to_json() + "\n")
    if args.report == "table":
        print(format_table({name: report}))
    else:
        print(report.to_json())
    return EXIT_OK


def cmd_report(args) -> int:
    reports = {}
    for path in args.reports:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            reports[Path(path).stem] = CdpReport(**doc)
        except (OSError, ValueError, TypeError) as e:
            raise UsageError(f"cannot read report {path}: {e}") from e
    if args.report == "json":
        print(json.dumps({k: v.to_dict() for k, v in reports.items()}, indent=2))
    else:
        print(format_table(reports))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default="runs", help="output directory")

    p = argparse.ArgumentParser(prog="cropcall", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="export simulator episodes as a dataset")
    s.add_argument("--episodes", type=int, default=200)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("curate", parents=[common], help="run the curation pipeline")
    c.add_argument("dataset", help="input JSONL {sample_id, image, question, answer}")
    c.add_argument("--labeler", choices=["judge", "anls"])
    c.add_argument("--mock-fixtures", help="scripted replies keyed by request fingerprint")
    c.add_argument("--endpoint", help="chat-completions URL used for every model")
    c.add_argument("--concurrency", type=int)
    c.set_defaults(func=cmd_curate)

    t = sub.add_parser("train", parents=[common], help="cold-start SFT then GRPO on the simulator")
    t.add_argument("--stage", choices=["sft-only", "grpo-only", "full"], default="full")
    t.add_argument("--sft-records", help="curated records JSONL to clone instead of oracle labels")
    t.add_argument("--sft-samples", help="simulator samples JSONL matching --sft-records")
    t.add_argument("--init", help="policy file to start grpo-only from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a policy on held-out episodes")
    e.add_argument("--policy")
    e.add_argument("--builtin", choices=sorted(BUILTINS))
    e.add_argument("--episodes", type=int)
    e.add_argument("--report", choices=["json", "table"], default="table")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="tabulate saved eval reports")
    r.add_argument("reports", nargs="+")
    r.add_argument("--report", choices=["json", "table"], default="table")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, PolicyLoadError, InvalidInputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        log.exception("internal error: %s", e)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
