#!/usr/bin/env python3
"""
daclip-desk 命令列入口
Commands: gen-data, pretrain-clip, train-daclip, train-restorer, restore,
evaluate, ablate, plot, pipeline
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from utils.config import RunConfig, config_to_dict, load_config, validate_config
from utils.errors import ConfigError, exit_code_for
from utils.logging_config import setup_logging

logger = logging.getLogger("daclip_desk.cli")


def _override(config: RunConfig, updates: Dict[str, Any]) -> RunConfig:
    """Apply dotted-key overrides (None values are ignored) and revalidate"""
    data = config_to_dict(config)
    for dotted, value in updates.items():
        if value is None:
            continue
        target = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            target = target[part]
        target[leaf] = value
    return validate_config(data)


def _data_splits(path: str) -> Tuple[Path, Optional[Path]]:
    """A dataset root yields (train, test) manifests; a split directory or manifest file yields (it, None)"""
    from data.dataset_builder import MANIFEST_NAME, manifest_path

    root = Path(path)
    if root.is_dir() and (root / "train" / MANIFEST_NAME).exists():
        test = manifest_path(root, "test")
        return manifest_path(root, "train"), test if test.exists() else None
    if not root.exists():
        raise ConfigError(f"dataset not found: {path}", key="--data")
    return root, None


def _test_split(path: str) -> Path:
    train, test = _data_splits(path)
    return test or train


def _parse_named(values: Optional[List[str]]) -> Dict[str, str]:
    named = {}
    for item in values or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected NAME=PATH, got '{item}'", key="--extra")
        named[name] = value
    return named


def cmd_gen_data(args, config: RunConfig) -> None:
    from data.dataset_builder import build_all

    manifests = build_all(config.dataset, args.out, seed=config.seed)
    for split, manifest in manifests.items():
        logger.info(f"{split}: {len(manifest.entries)} samples, counts {manifest.counts}")


def cmd_pretrain_clip(args, config: RunConfig) -> None:
    from models.pretrain import pretrain_clip

    result = pretrain_clip(config, args.out)
    logger.info(f"Held-out caption retrieval top-1: {result.retrieval_top1:.3f}")


def cmd_train_daclip(args, config: RunConfig) -> None:
    from controller.trainer import train_controller

    config = _override(config, {
        "controller.zero_init": False if args.no_zero_init else None,
        "controller.learn_tau": True if args.learn_tau else None,
        "controller.mode": args.mode,
    })
    train, test = _data_splits(args.data)
    result = train_controller(config, args.clip, train, args.out, test_data=test)
    if result.heldout_accuracy is not None:
        logger.info(f"Held-out degradation accuracy: {result.heldout_accuracy:.3f}")


def cmd_train_restorer(args, config: RunConfig) -> None:
    from restoration.trainer import train_restorer

    config = _override(config, {
        "restorer.backend": args.backend,
        "restorer.mode": args.mode,
        "restorer.embedding_source": args.source,
        "restorer.degradations": args.degradations.split(",") if args.degradations else None,
        "restorer.patch_size": args.patch_size,
    })
    train, test = _data_splits(args.data)
    result = train_restorer(config, args.daclip, train, test, args.out)
    if result.history:
        logger.info(f"Final validation PSNR: {result.history[-1]['psnr']:.3f} dB")


def cmd_restore(args, config: RunConfig) -> None:
    from restoration.inference import restore_files

    written = restore_files(args.model, args.daclip, args.input, args.out, seed=config.seed,
                            device=config.device)
    print(json.dumps([str(p) for p in written], indent=2))


def cmd_evaluate(args, config: RunConfig) -> None:
    from controller.daclip import load_daclip
    from data.dataset_builder import load_manifest
    from data.datasets import DegradedPairs

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    test = DegradedPairs.from_manifest(load_manifest(_test_split(args.data)))
    daclip = load_daclip(args.daclip, device=config.device)[0] if args.daclip else None

    if args.what == "classify":
        from evaluation.classification import eval_classification

        if daclip is None:
            raise ConfigError("classification needs --daclip", key="--daclip")
        extra = {name: load_daclip(path, device=config.device)[0]
                 for name, path in _parse_named(args.extra).items()}
        table = eval_classification(daclip, test, extra, batch_size=config.eval.batch_size)
        table.save_csv(out / "classification.csv")
        (out / "classification.json").write_text(json.dumps(table.to_dict(), indent=2), encoding="utf-8")
        print(table.to_frame().to_string(float_format=lambda v: f"{v:.3f}"))

    elif args.what == "restore":
        from evaluation.restoration_eval import eval_restoration
        from restoration.restorer import load_restorer
        from restoration.trainer import load_pairs

        if not args.model:
            raise ConfigError("restoration evaluation needs --model", key="--model")
        restorer, model_config, manifest = load_restorer(args.model, device=config.device)
        evaluated = load_pairs(test, model_config.restorer.degradations)
        report = eval_restoration(restorer, daclip, evaluated, manifest.metadata.get("embedding_source", "daclip"),
                                  config_to_dict(model_config), config.eval.sample_seed, config.eval.batch_size)
        report.save(out, "report")
        print(report.to_frame().to_string(index=False))

    elif args.what == "content":
        from evaluation.restoration_eval import content_similarity

        if daclip is None:
            raise ConfigError("content comparison needs --daclip", key="--daclip")
        similarity = content_similarity(daclip, test)
        (out / "content_similarity.json").write_text(json.dumps(similarity, indent=2, sort_keys=True),
                                                     encoding="utf-8")
        print(json.dumps(similarity, indent=2))

    else:
        from evaluation.complexity import model_complexity
        from restoration.restorer import load_restorer

        named = _parse_named(args.extra)
        if daclip is None or not args.model or "plain" not in named:
            raise ConfigError("complexity needs --daclip, --model and --extra plain=<restorer>", key="--extra")
        conditioned = load_restorer(args.model, device=config.device)[0]
        plain = load_restorer(named["plain"], device=config.device)[0]
        frame = model_complexity(conditioned, plain, daclip, test.lq[:config.eval.batch_size])
        frame.to_csv(out / "complexity.csv", index=False)
        print(frame.to_string(index=False))


def cmd_ablate(args, config: RunConfig) -> None:
    from evaluation.ablation import AblationSpec, run_ablation

    spec = AblationSpec.load(args.spec) if args.spec else AblationSpec()
    spec = spec.model_copy(update={k: v for k, v in {
        "daclip": args.daclip, "daclip_no_zero": args.daclip_no_zero, "data": args.data,
    }.items() if v is not None})
    if not spec.data:
        raise ConfigError("ablation needs a dataset (--data or spec.data)", key="ablation.data")
    train, test = _data_splits(spec.data)
    if test is None:
        raise ConfigError("ablation needs a dataset root with train and test splits", key="ablation.data")
    result = run_ablation(spec, config, train, test, args.out)
    print(result.summary.to_string(float_format=lambda v: f"{v:.3f}"))
    for check in result.checks:
        logger.info(f"{'OK ' if check['holds'] else 'NO '} {check['claim']} ({check['lhs']:.3f} vs {check['rhs']:.3f})")


def cmd_plot(args, config: RunConfig) -> None:
    from evaluation.plots import emit_plots, load_curves

    outputs = emit_plots(load_curves(args.curves), args.out)
    for metric, paths in outputs.items():
        logger.info(f"{metric}: {paths['png']} {paths['csv']}")


def cmd_pipeline(args, config: RunConfig) -> None:
    from pipeline.runner import run_pipeline

    runner = run_pipeline(config, args.out, resume=args.resume, log_dir=args.log_dir)
    logger.info(f"Stages: {dict(zip(runner.job_status, runner.statuses()))}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-clip": cmd_pretrain_clip,
    "train-daclip": cmd_train_daclip,
    "train-restorer": cmd_train_restorer,
    "restore": cmd_restore,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config (JSON or YAML); defaults apply when omitted")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--resume", action="store_true", help="rerun stages whose outputs fail verification")
    common.add_argument("--log-dir", help="log directory (default $DACLIP_LOG_DIR or logs; <out>/logs for pipeline)")

    parser = argparse.ArgumentParser(prog="daclip-desk", description="Desk-scale degradation-aware CLIP")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="generate the synthetic train/test splits")
    sub.add_parser("pretrain-clip", parents=[common], help="contrastive pretraining of the toy CLIP")

    p = sub.add_parser("train-daclip", parents=[common], help="train the controller")
    p.add_argument("--clip", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--no-zero-init", action="store_true")
    p.add_argument("--learn-tau", action="store_true")
    p.add_argument("--mode", choices=["controller", "finetune-all"])

    p = sub.add_parser("train-restorer", parents=[common], help="train a restoration network")
    p.add_argument("--backend", choices=["mse", "diffusion"])
    p.add_argument("--mode", choices=["none", "degradation", "content", "both"])
    p.add_argument("--source", choices=["daclip", "gt", "text"])
    p.add_argument("--degradations", help="comma-separated subset of degradation labels")
    p.add_argument("--patch-size", type=int)
    p.add_argument("--daclip")
    p.add_argument("--data", required=True)

    p = sub.add_parser("restore", parents=[common], help="restore PNG images")
    p.add_argument("--model", required=True)
    p.add_argument("--daclip")
    p.add_argument("--in", dest="input", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="classification, restoration or content reports")
    p.add_argument("--what", choices=["classify", "restore", "content", "complexity"], required=True)
    p.add_argument("--daclip")
    p.add_argument("--model")
    p.add_argument("--data", required=True)
    p.add_argument("--extra", action="append", help="NAME=PATH of an extra checkpoint (repeatable)")

    p = sub.add_parser("ablate", parents=[common], help="run restoration ablation variants")
    p.add_argument("--spec")
    p.add_argument("--daclip")
    p.add_argument("--daclip-no-zero")
    p.add_argument("--data")

    p = sub.add_parser("plot", parents=[common], help="plot saved training curves")
    p.add_argument("--curves", required=True)

    sub.add_parser("pipeline", parents=[common], help="run every stage end to end")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """主函數"""
    load_dotenv()
    args = build_parser().parse_args(argv)
    if args.command != "pipeline":
        setup_logging(args.log_dir)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = _override(config, {"seed": args.seed})
        COMMANDS[args.command](args, config)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {e}")
        if code == 1:
            logger.exception("Unexpected error")
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
