"""Command-line entry point: train, eval, gen-synth, flag, import-features.

Configuration precedence is preset defaults < config file < flags. All file
outputs are written atomically. Exit codes: 0 success, 2 configuration
error, 3 data/format error, 4 numeric failure.
"""

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import backbone as BB
from . import training as TR
from . import uncertainty as UQ
from .errors import ConfigError, DataError, DcatError, NumericError
from .model import DcatModel, ModelConfig
from .util import atomic_write_text, make_rng

CHECKPOINT_NAME = "checkpoint.dcat"


def build_parser():
    parser = argparse.ArgumentParser(prog="dcat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset directory + manifest",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--classes", type=int, default=4, help="number of classes")
    p.add_argument("--per-class", type=int, default=250, help="samples per class (80/20 split applied)")
    p.add_argument("--size", type=int, default=64, help="image height/width")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.add_argument("--noise", type=float, default=0.3, help="Gaussian pixel noise sigma")

    p = sub.add_parser("train", help="train on a manifest dataset and evaluate",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--data", required=True, help="dataset directory with manifest.csv")
    p.add_argument("--out", default=None, help="output directory (env DCAT_OUT_DIR overrides the default)")
    p.add_argument("--config", default=None, help="JSON run-config file")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk", help="named defaults")
    p.add_argument("--lr", type=float, default=None, help="learning rate override")
    p.add_argument("--weight-decay", type=float, default=None, help="weight decay override")
    p.add_argument("--batch-size", type=int, default=None, help="batch size override")
    p.add_argument("--epochs", type=int, default=None, help="max epochs override")
    p.add_argument("--dropout", type=float, default=None, help="dropout rate override")
    p.add_argument("--mc-passes", type=int, default=None, help="MC passes for the final evaluation")
    p.add_argument("--seed", type=int, default=None, help="training seed override")
    p.add_argument("--width", type=int, default=None, help="common fusion width override")
    p.add_argument("--reduction", type=int, default=None, help="channel-gate reduction ratio")
    p.add_argument("--fusion-mode", choices=["cross", "self"], default=None, help="attention query source")
    p.add_argument("--threshold", type=float, default=None, help="HUS entropy threshold (default ln(N)/2)")

    p = sub.add_parser("eval", help="evaluate a checkpoint with MC-dropout",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory with manifest.csv")
    p.add_argument("--out", default=None, help="output directory (env DCAT_OUT_DIR overrides the default)")
    p.add_argument("--split", choices=["train", "test"], default="test", help="which split to evaluate")
    p.add_argument("--mc-passes", type=int, default=100, help="stochastic forward passes per sample")
    p.add_argument("--threshold", type=float, default=None, help="HUS entropy threshold (default ln(N)/2)")
    p.add_argument("--seed", type=int, default=0, help="MC sampling seed")

    p = sub.add_parser("flag", help="re-threshold an uncertainty CSV and print the HUS table",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--report", required=True, help="uncertainty.csv produced by eval")
    p.add_argument("--threshold", type=float, required=True, help="entropy threshold")

    p = sub.add_parser("import-features", help="validate an externally produced feature-map container",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--input", required=True, help="feature container file (keys a1, a2, b1, b2)")
    return parser


def resolve_out_dir(flag_value):
    if flag_value:
        return flag_value
    return os.environ.get("DCAT_OUT_DIR", "dcat_out")


def require_paths(*paths):
    for path in paths:
        if path is not None and not os.path.exists(path):
            raise DataError(f"path does not exist: {path}")


def load_run_config(args):
    """Merge preset defaults, config-file values, and flag overrides."""
    file_cfg = {}
    if args.config:
        require_paths(args.config)
        with open(args.config) as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    preset_name = file_cfg.get("preset", args.preset)
    train_cfg, _ = TR.preset(preset_name)
    for key, value in file_cfg.get("train", {}).items():
        if not hasattr(train_cfg, key):
            raise ConfigError(f"unknown train config key {key!r}")
        setattr(train_cfg, key, value)
    flag_map = {
        "lr": "learning_rate", "weight_decay": "weight_decay", "batch_size": "batch_size",
        "epochs": "max_epochs", "dropout": "dropout_rate", "mc_passes": "mc_passes",
        "seed": "seed", "width": "common_width",
    }
    for flag, attr in flag_map.items():
        value = getattr(args, flag)
        if value is not None:
            setattr(train_cfg, attr, value)
    train_cfg.__post_init__()

    model_section = dict(file_cfg.get("model", {}))
    reduction = args.reduction if args.reduction is not None else model_section.get("reduction", 8)
    fusion_mode = args.fusion_mode if args.fusion_mode is not None else model_section.get("fusion_mode", "cross")
    threshold = args.threshold if args.threshold is not None else file_cfg.get("threshold")

    def bb_config(section, network_id, default_residual):
        sec = dict(file_cfg.get(section, {}))
        return BB.BackboneConfig(
            network_id=network_id,
            stage_channels=sec.get("stage_channels", [16, 32, 64, 128]),
            input_size=train_cfg.input_size,
            use_residual=sec.get("use_residual", default_residual),
        )

    return train_cfg, bb_config("backbone_a", "A", False), bb_config("backbone_b", "B", True), reduction, fusion_mode, threshold


def write_json(path, payload):
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_curves_csv(out_dir, report):
    for kind, header in (("roc", ["class", "fpr", "tpr"]), ("pr", ["class", "recall", "precision"])):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for class_ix, points in sorted(report["curves"][kind].items(), key=lambda kv: int(kv[0])):
            for x, y in points:
                writer.writerow([class_ix, f"{x:.9f}", f"{y:.9f}"])
        atomic_write_text(os.path.join(out_dir, f"curves_{kind}.csv"), buf.getvalue())


def emit_eval_outputs(out_dir, report, records, threshold, m_passes, n_classes):
    write_json(os.path.join(out_dir, "eval_report.json"), report)
    UQ.write_uncertainty_report(
        os.path.join(out_dir, "uncertainty.csv"),
        os.path.join(out_dir, "uncertainty_summary.json"),
        records, threshold, m_passes, n_classes,
    )
    write_curves_csv(out_dir, report)


def cmd_gen_synth(args):
    if args.classes < 2:
        raise ConfigError(f"--classes must be >= 2, got {args.classes}")
    if args.per_class < 2:
        raise ConfigError(f"--per-class must be >= 2, got {args.per_class}")
    train_ds, test_ds = TR.make_synthetic_dataset(
        args.per_class, args.classes, args.size, make_rng(args.seed, TR.DATA_STREAM), noise_sigma=args.noise
    )
    TR.save_dataset(args.out, train_ds, test_ds)
    print(f"wrote {len(train_ds)} train + {len(test_ds)} test samples to {args.out}")
    return 0


def cmd_train(args):
    require_paths(args.data)
    train_cfg, bb_a, bb_b, reduction, fusion_mode, threshold = load_run_config(args)
    train_ds, test_ds = TR.load_dataset(args.data)
    model_cfg = ModelConfig(
        n_classes=train_ds.n_classes,
        common_width=train_cfg.common_width,
        reduction=reduction,
        dropout_rate=train_cfg.dropout_rate,
        fusion_mode=fusion_mode,
        backbone_a=bb_a,
        backbone_b=bb_b,
    )
    out_dir = resolve_out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    model = DcatModel(model_cfg, seed=train_cfg.seed)
    result = TR.train(model, train_ds, test_ds, train_cfg)
    atomic_write_text(os.path.join(out_dir, "training_log.csv"), TR.log_to_csv(result.log_rows))
    model.save(os.path.join(out_dir, CHECKPOINT_NAME), extra_records=TR.adam_records(result.adam_state))
    if threshold is None:
        threshold = UQ.default_threshold(train_ds.n_classes)
    report, records = TR.evaluate(model, test_ds, train_cfg, threshold=threshold)
    emit_eval_outputs(out_dir, report, records, threshold, train_cfg.mc_passes, train_ds.n_classes)
    print(
        f"best test accuracy {result.best_test_acc:.4f} at epoch {result.best_epoch}; "
        f"outputs in {out_dir}"
    )
    return 0


def cmd_eval(args):
    require_paths(args.checkpoint, args.data)
    model, _ = DcatModel.load(args.checkpoint)
    train_ds, test_ds = TR.load_dataset(args.data)
    ds = test_ds if args.split == "test" else train_ds
    if ds.n_classes != model.cfg.n_classes:
        raise DataError(
            f"dataset has {ds.n_classes} classes but the checkpoint expects {model.cfg.n_classes}"
        )
    threshold = args.threshold if args.threshold is not None else UQ.default_threshold(ds.n_classes)
    eval_cfg = TR.TrainConfig(
        mc_passes=args.mc_passes, seed=args.seed,
        common_width=model.cfg.common_width, input_size=model.cfg.backbone_a.input_size,
    )
    out_dir = resolve_out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    report, records = TR.evaluate(model, ds, eval_cfg, threshold=threshold)
    emit_eval_outputs(out_dir, report, records, threshold, args.mc_passes, ds.n_classes)
    print(f"accuracy {report['accuracy']:.4f}, {report['uncertainty']['hus_count']} HUS; outputs in {out_dir}")
    return 0


def cmd_flag(args):
    require_paths(args.report)
    with open(args.report) as fh:
        records = UQ.records_from_csv(fh.read())
    flagged, summary = UQ.flag_high_uncertainty(records, args.threshold)
    print(f"{len(flagged)} high-uncertainty sample(s) above entropy {args.threshold:.4f} "
          f"(mean {summary['mean_entropy']:.4f}, std {summary['std_entropy']:.4f})")
    if flagged:
        print(f"{'sample_id':>9}  {'entropy':>9}  {'max_prob':>9}  {'predicted':>9}  {'truth':>6}")
        for r in flagged:
            truth = "-" if r.true_label is None else str(r.true_label)
            print(f"{r.sample_id:>9}  {r.entropy:>9.4f}  {r.max_prob:>9.4f}  {r.predicted_label:>9}  {truth:>6}")
    return 0


def cmd_import_features(args):
    require_paths(args.input)
    fs = BB.import_feature_maps(args.input)
    for key, tensor in zip(BB.FEATURE_KEYS, fs.maps()):
        print(f"{key}: shape {tuple(tensor.shape)}")
    print("feature container is valid")
    return 0


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "flag": cmd_flag,
    "import-features": cmd_import_features,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except DcatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
