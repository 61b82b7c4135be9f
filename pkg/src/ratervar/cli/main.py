"""
Command line interface.

    ratervar gen-data        synthetic multi-rater dataset
    ratervar train           fit a model and rater bank
    ratervar predict         gold (or rater) prediction with uncertainty
    ratervar simulate        intra-rater variants of one rater
    ratervar fuse            STAPLE or majority vote consensus
    ratervar eval            agreement tables between mask directories
    ratervar inspect-latent  rater latent geometry of a checkpoint
    ratervar report          agreement, latent and overlay report
    ratervar sweep           one-at-a-time hyperparameter grid

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(malformed or missing inputs, bad checkpoint), 3 numerical failure.
"""

import argparse
import dataclasses
import logging
import os
import sys
import warnings
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ratervar import __version__
from ratervar.cli.manifest import MANIFEST_NAME, RunManifest, verify_manifest, write_manifest
from ratervar.data.dataset import META_FILE, load_dataset, read_meta
from ratervar.data.io import ensure_dir, load_mask, save_mask
from ratervar.data.synthesize import GenerationConfig, gen_dataset
from ratervar.exception.exception import (
    ConfigError,
    DataFormatError,
    MetricError,
    NumericalError,
    PreconditionError,
    RaterVarError,
)
from ratervar.fusion.staple import fuse_dataset, staple_dataset
from ratervar.inference.predict import (
    DEFAULT_SAMPLES,
    PredictionResult,
    blend_raters,
    predict,
    simulate_rater,
)
from ratervar.metrics.agreement import evaluate
from ratervar.misc.config import merge_config
from ratervar.misc.logging import LoggerManager
from ratervar.misc.parallel import parallelize
from ratervar.misc.utils import format_key_values, get_logger
from ratervar.report.report import latent_table, write_report
from ratervar.report.sweep import DEFAULT_GRID, sweep
from ratervar.train.checkpoint import load_checkpoint
from ratervar.train.config import TrainConfig
from ratervar.train.trainer import train
from ratervar.warn.warnings import warning_traceback

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class RaterVarParser(argparse.ArgumentParser):
    """argparse parser that reports usage errors through UsageError instead of exiting."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def _config_overrides(args, names: List[str]) -> Dict[str, object]:
    return {name: getattr(args, name, None) for name in names}


def _manifest_for(args, config: Dict[str, object], seed: int, inputs, outputs) -> RunManifest:
    return RunManifest(
        subcommand=args.command,
        argv=list(args.argv),
        config=config,
        seed=seed,
        inputs=[p for p in inputs if p],
        outputs=[p for p in outputs if p],
    )


def _check_separate(outPath: str, inputDir: str):
    """Refuse to write into an input dataset directory."""
    out = os.path.abspath(outPath)
    src = os.path.abspath(inputDir)
    if out == src or out.startswith(src + os.sep):
        raise PreconditionError(f"output {outPath} lies inside input dataset {inputDir}")


def _config_dict(config) -> Dict[str, object]:
    return dataclasses.asdict(config)


# gen-data

GEN_FIELDS = ["train", "test", "size", "classes", "shapes", "coverage", "raters", "jitter", "p_apply", "noise", "seed"]


def cmd_gen_data(args) -> Tuple[RunManifest, str]:
    cfg = GenerationConfig()
    if args.config:
        with open(args.config, "r") as f:
            cfg = GenerationConfig.from_text(f.read(), source=args.config)
    cfg = merge_config(cfg, _config_overrides(args, GEN_FIELDS))
    gen_dataset(cfg, args.out, workers=args.workers, pbar=args.pbar)
    manifest = _manifest_for(args, _config_dict(cfg), cfg.seed, [args.config], [args.out])
    return manifest, os.path.join(args.out, MANIFEST_NAME)


# train

TRAIN_FIELDS = [
    "epochs",
    "lr_net",
    "lr_latent",
    "decay_start_epoch",
    "decay_factor",
    "lambda_kl",
    "K_train",
    "batch_size",
    "loss",
    "seed",
    "D",
    "prior_var",
    "post_var",
    "kl_scope",
    "checkpoint_every",
    "augment",
    "gold_source",
    "num_workers",
]


def _train_config(args) -> TrainConfig:
    overrides = _config_overrides(args, TRAIN_FIELDS)
    if args.config:
        return TrainConfig.from_file(args.config, overrides=overrides)
    return merge_config(TrainConfig(), overrides)


def cmd_train(args) -> Tuple[RunManifest, str]:
    cfg = _train_config(args)
    _check_separate(args.out, args.dataset)
    dataset = load_dataset(args.dataset)
    result = train(dataset, cfg, outDir=args.out, pbar=args.pbar)
    outputs = [result.checkpoint_path, result.log_path, os.path.join(args.out, "config.txt")]
    manifest = _manifest_for(args, _config_dict(cfg), cfg.seed, [args.config, args.dataset], outputs)
    return manifest, os.path.join(args.out, MANIFEST_NAME)


# predict / simulate


def uncertainty_to_pgm(uncertainty: np.ndarray) -> np.ndarray:
    """0 uncertainty maps to white (255), maximal uncertainty to black."""
    u = np.clip(np.asarray(uncertainty, dtype=np.float64), 0.0, 1.0)
    return (255 - np.rint(u * 255)).astype(np.uint8)


def write_prediction(outDir: str, imageId: str, result: PredictionResult, saveSamples: bool) -> List[str]:
    paths = [
        os.path.join(outDir, f"{imageId}_argmax.pgm"),
        os.path.join(outDir, f"{imageId}_uncertainty.pgm"),
        os.path.join(outDir, f"{imageId}.txt"),
    ]
    save_mask(paths[0], result.argmax_map)
    save_mask(paths[1], uncertainty_to_pgm(result.uncertainty))
    sidecar = {"image": imageId, **result.metadata}
    sidecar["mean_uncertainty"] = float(result.uncertainty.mean())
    sidecar["mean_entropy"] = float(result.entropy.mean())
    with open(paths[2], "w") as f:
        f.write(format_key_values(sidecar))
    if saveSamples:
        for k, sampleMap in enumerate(result.sample_maps):
            path = os.path.join(outDir, f"{imageId}_sample_{k:03d}.pgm")
            save_mask(path, sampleMap)
            paths.append(path)
    return paths


def _run_predictions(args, mode: str) -> Tuple[RunManifest, str]:
    _check_separate(args.out, args.dataset)
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    model, bank = checkpoint.model, checkpoint.bank
    if model.num_classes != dataset.num_classes:
        raise PreconditionError(
            f"checkpoint has {model.num_classes} classes, dataset has {dataset.num_classes}"
        )
    rater = bank.gold if args.rater is None else args.rater
    bank.check_rater(rater)
    ensure_dir(args.out)
    ids = dataset.image_ids

    @parallelize
    def _one(imageId):
        image = dataset.images[imageId]
        if mode == "simulate":
            return simulate_rater(model, bank, image, rater, K=args.K, seed=args.seed)
        if args.blend_with is not None:
            return blend_raters(model, bank, image, rater, args.blend_with, K=args.K, seed=args.seed)
        return predict(model, bank, image, r=rater, K=args.K, seed=args.seed)

    outputs = list()
    for imageId, result in zip(ids, _one(ids, workers=args.workers)):
        outputs += write_prediction(args.out, imageId, result, args.save_samples)
    config = {"rater": rater, "K": args.K, "blend_with": getattr(args, "blend_with", None)}
    config = {k: v for k, v in config.items() if v is not None}
    manifest = _manifest_for(args, config, args.seed, [args.checkpoint, args.dataset], [args.out])
    get_logger("ratervar.cli.main").info(f"Wrote {len(outputs)} prediction files to {args.out}")
    return manifest, os.path.join(args.out, MANIFEST_NAME)


def cmd_predict(args):
    return _run_predictions(args, "predict")


def cmd_simulate(args):
    return _run_predictions(args, "simulate")


# fuse


def cmd_fuse(args) -> Tuple[RunManifest, str]:
    _check_separate(args.out, args.dataset)
    dataset = load_dataset(args.dataset)
    ensure_dir(args.out)
    outputs = list()
    if args.method == "staple":
        fused, result = staple_dataset(dataset, max_iters=args.max_iters, tol=args.tol)
        confusionPath = os.path.join(args.out, "confusion.csv")
        result.confusion.to_frame().to_csv(confusionPath, index=False)
        historyPath = os.path.join(args.out, "staple_log.csv")
        pd.DataFrame(
            {"iteration": range(result.iterations), "log_likelihood": result.log_likelihoods}
        ).to_csv(historyPath, index=False)
        outputs += [confusionPath, historyPath]
    else:
        fused = fuse_dataset(dataset, method="majority")
    for imageId, mask in fused.items():
        path = os.path.join(args.out, f"{imageId}.pgm")
        save_mask(path, mask)
        outputs.append(path)
    config = {"method": args.method, "max_iters": args.max_iters, "tol": args.tol}
    manifest = _manifest_for(args, config, 0, [args.dataset], outputs)
    return manifest, os.path.join(args.out, MANIFEST_NAME)


# eval


def _mask_directory(path: str, numClasses: int) -> Dict[str, np.ndarray]:
    """Class maps of a directory keyed by image id; prediction side files are skipped."""
    if not os.path.isdir(path):
        raise DataFormatError("mask directory does not exist", path=path)
    masks = dict()
    for name in sorted(os.listdir(path)):
        if not name.endswith(".pgm") or name.endswith("_uncertainty.pgm") or "_sample_" in name:
            continue
        imageId = name[: -len(".pgm")]
        if imageId.endswith("_argmax"):
            imageId = imageId[: -len("_argmax")]
        masks[imageId] = load_mask(os.path.join(path, name), numClasses)
    return masks


def _references(path: str, numClasses: Optional[int]) -> Tuple[List[Tuple[str, str]], int]:
    """(name, directory) reference sources; a dataset directory expands to its raters and gold."""
    if os.path.isfile(os.path.join(path, META_FILE)):
        meta = read_meta(path)
        sources = [
            (f"rater_{r}", os.path.join(path, "raters", str(r))) for r in range(meta["num_raters"])
        ]
        if os.path.isdir(os.path.join(path, "gold")):
            sources.append(("gold", os.path.join(path, "gold")))
        return sources, meta["num_classes"]
    if numClasses is None:
        raise ConfigError(f"--classes is required when {path} is not a dataset directory")
    return [(os.path.basename(os.path.normpath(path)), path)], numClasses


def cmd_eval(args) -> Tuple[RunManifest, str]:
    logger = get_logger("ratervar.cli.main")
    references = list()
    numClasses = args.classes
    for ref in args.ref:
        sources, numClasses = _references(ref, numClasses)
        references += sources
    rows = list()
    for pred in args.pred:
        predName = os.path.basename(os.path.normpath(pred))
        predMasks = _mask_directory(pred, numClasses)
        for refName, refDir in references:
            refMasks = _mask_directory(refDir, numClasses) if os.path.isdir(refDir) else dict()
            common = sorted(set(predMasks) & set(refMasks))
            if not common:
                logger.warning(f"{predName} and {refName} share no images; skipped")
                continue
            try:
                scores = evaluate(
                    [predMasks[i] for i in common],
                    [refMasks[i] for i in common],
                    numClasses,
                    mode=args.mode,
                )
            except MetricError as err:
                logger.warning(f"{predName} vs {refName}: {err}; skipped")
                continue
            rows.append(
                {"prediction": predName, "reference": refName, "images": len(common), **scores.as_row(), "pixels": scores.pixels}
            )
    if not rows:
        raise MetricError("no prediction/reference pair could be evaluated")
    table = pd.DataFrame(rows)
    ensure_dir(os.path.dirname(os.path.abspath(args.out)))
    table.to_csv(args.out, index=False)
    manifest = _manifest_for(args, {"mode": args.mode, "classes": numClasses}, 0, args.pred + args.ref, [args.out])
    return manifest, os.path.splitext(args.out)[0] + "_" + MANIFEST_NAME


# inspect-latent


def cmd_inspect_latent(args) -> Tuple[RunManifest, str]:
    checkpoint = load_checkpoint(args.checkpoint)
    table = latent_table(checkpoint.bank)
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    manifest = _manifest_for(args, dict(), 0, [args.checkpoint], [args.out])
    if args.out is None:
        return manifest, os.path.splitext(os.path.abspath(args.checkpoint))[0] + "_inspect_" + MANIFEST_NAME
    ensure_dir(os.path.dirname(os.path.abspath(args.out)))
    table.to_csv(args.out, index=False)
    return manifest, os.path.splitext(args.out)[0] + "_" + MANIFEST_NAME


# report


def cmd_report(args) -> Tuple[RunManifest, str]:
    _check_separate(args.out, args.dataset)
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    paths = write_report(
        checkpoint.model,
        checkpoint.bank,
        dataset,
        args.out,
        K=args.K,
        seed=args.seed,
        goldMetrics=args.gold_metrics,
        pbar=args.pbar,
    )
    config = {"K": args.K, "gold_metrics": args.gold_metrics}
    manifest = _manifest_for(args, config, args.seed, [args.checkpoint, args.dataset], paths.all())
    return manifest, os.path.join(args.out, MANIFEST_NAME)


# sweep


def cmd_sweep(args) -> Tuple[RunManifest, str]:
    base = _train_config(args)
    grid = DEFAULT_GRID
    if args.only:
        names = [n.strip() for n in args.only.split(",") if n.strip()]
        unknown = [n for n in names if n not in DEFAULT_GRID]
        if unknown:
            raise ConfigError(f"unknown sweep hyperparameter(s) {unknown}; choose from {list(DEFAULT_GRID)}")
        grid = {n: DEFAULT_GRID[n] for n in names}
    for path in (args.train_set, args.test_set):
        _check_separate(args.out, path)
    trainSet = load_dataset(args.train_set)
    testSet = load_dataset(args.test_set)
    sweep(trainSet, testSet, base, grid=grid, outDir=args.out, K=args.K, pbar=args.pbar)
    manifest = _manifest_for(
        args, _config_dict(base), base.seed, [args.config, args.train_set, args.test_set], [os.path.join(args.out, "sweep.csv")]
    )
    return manifest, os.path.join(args.out, MANIFEST_NAME)


# verify


def cmd_verify(args) -> Tuple[None, None]:
    ok = verify_manifest(args.manifest)
    print("ok" if ok else "mismatch")
    if not ok:
        raise DataFormatError("artifacts do not match their recorded sha256", path=args.manifest)
    return None, None


def _add_train_flags(parser):
    group = parser.add_argument_group("training hyperparameters (override --config)")
    group.add_argument("--epochs", type=int)
    group.add_argument("--lr-net", dest="lr_net", type=float)
    group.add_argument("--lr-latent", dest="lr_latent", type=float)
    group.add_argument("--decay-start-epoch", dest="decay_start_epoch", type=int)
    group.add_argument("--decay-factor", dest="decay_factor", type=float)
    group.add_argument("--lambda-kl", "--lambda", dest="lambda_kl", type=float)
    group.add_argument("--K-train", dest="K_train", type=int)
    group.add_argument("--batch-size", dest="batch_size", type=int)
    group.add_argument("--loss", choices=("dice", "cross_entropy"))
    group.add_argument("--seed", type=int)
    group.add_argument("--latent-dim", "-D", dest="D", type=int)
    group.add_argument("--prior-var", dest="prior_var", type=float)
    group.add_argument("--post-var", dest="post_var", type=float)
    group.add_argument("--kl-scope", dest="kl_scope", choices=("batch", "all"))
    group.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    group.add_argument("--augment", action=argparse.BooleanOptionalAction, default=None)
    group.add_argument("--gold-source", dest="gold_source", choices=("provided", "staple", "majority", "none"))
    group.add_argument("--num-workers", dest="num_workers", type=int)


def _add_prediction_flags(parser, raterRequired: bool):
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--dataset", required=True, help="dataset directory whose images are predicted")
    parser.add_argument("--out", required=True)
    parser.add_argument(
        "--rater", type=int, required=raterRequired, default=None, help="rater id; defaults to the gold slot"
    )
    parser.add_argument("--K", type=int, default=DEFAULT_SAMPLES, help="latent samples per image")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)


def build_parser() -> RaterVarParser:
    common = RaterVarParser(add_help=False)
    common.add_argument("--log-file", dest="log_file", default=None, help="also log to this file")
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG and warning tracebacks"
    )

    parser = RaterVarParser(prog="ratervar", description="Multi-rater segmentation with per-rater latent posteriors.")
    parser.add_argument("--version", action="version", version=f"ratervar {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic multi-rater dataset")
    p.add_argument("--config", help="generation config file (key = value)")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--shapes", type=int)
    p.add_argument("--coverage", type=float)
    p.add_argument("--raters", help="e.g. faithful,confuser:2:3:0.8,under_segmenter:0.5@j=0")
    p.add_argument("--jitter", type=int)
    p.add_argument("--p-apply", dest="p_apply", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a model and rater bank")
    p.add_argument("--config", help="training config file (key = value)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict with uncertainty")
    _add_prediction_flags(p, raterRequired=False)
    p.add_argument("--blend-with", dest="blend_with", type=int, default=None, help="second rater to blend with")
    p.add_argument("--save-samples", dest="save_samples", action="store_true")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("simulate", parents=[common], help="sample segmentations in the style of one rater")
    _add_prediction_flags(p, raterRequired=True)
    p.set_defaults(handler=cmd_simulate, save_samples=True, blend_with=None)

    p = sub.add_parser("fuse", parents=[common], help="fuse rater masks into consensus labels")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("staple", "majority"), default="staple")
    p.add_argument("--max-iters", dest="max_iters", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(handler=cmd_fuse)

    p = sub.add_parser("eval", parents=[common], help="agreement between mask directories")
    p.add_argument("--pred", action="append", required=True, help="prediction directory (repeatable)")
    p.add_argument(
        "--ref", action="append", required=True, help="reference mask or dataset directory (repeatable)"
    )
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--mode", choices=("pooled", "per_image"), default="pooled")
    p.add_argument("--out", required=True, help="CSV file")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("inspect-latent", parents=[common], help="print the rater latents of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="optional CSV file")
    p.set_defaults(handler=cmd_inspect_latent)

    p = sub.add_parser("report", parents=[common], help="agreement, latent and overlay report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--K", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gold-metrics", dest="gold_metrics", action="store_true")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("sweep", parents=[common], help="one-at-a-time hyperparameter grid")
    p.add_argument("--config", help="base training config file")
    p.add_argument("--train-set", dest="train_set", required=True)
    p.add_argument("--test-set", dest="test_set", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--only", default=None, help="comma separated subset of " + ",".join(DEFAULT_GRID))
    p.add_argument("--K", type=int, default=DEFAULT_SAMPLES)
    _add_train_flags(p)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("verify", parents=[common], help="check the sha256 digests of a run manifest")
    p.add_argument("manifest")
    p.set_defaults(handler=cmd_verify)
    return parser


def configure_logging(args):
    clevel = logging.WARNING
    if args.verbose == 1:
        clevel = logging.INFO
    elif args.verbose >= 2:
        clevel = logging.DEBUG
        warnings.showwarning = warning_traceback
    level = logging.DEBUG if args.verbose >= 2 else logging.INFO
    LoggerManager.config_logger(args.log_file, level=level, clevel=clevel)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand and return its exit code.

    Parameters
    ----------
        argv : List[str], optional
            Arguments after the program name; defaults to sys.argv[1:].
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exit:
        return int(exit.code or 0)
    args.argv = argv
    args.pbar = args.verbose > 0
    configure_logging(args)
    logger = get_logger("ratervar.cli.main")

    try:
        manifest, manifestPath = args.handler(args)
        if manifestPath is not None:
            write_manifest(manifest, manifestPath)
    except NumericalError as err:
        logger.error(str(err))
        sys.stderr.write(f"ratervar: numerical failure: {err}\n")
        return EXIT_NUMERICAL
    except (ConfigError, PreconditionError) as err:
        sys.stderr.write(f"ratervar: {err}\n")
        return EXIT_USAGE
    except (RaterVarError, OSError) as err:
        sys.stderr.write(f"ratervar: {err}\n")
        return EXIT_DATA
    return EXIT_OK


def entry():
    sys.exit(main())
