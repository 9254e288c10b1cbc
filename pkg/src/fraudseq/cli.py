"""Command-line front end: gen, train, score, eval, baseline, sweep.

Every command is reproducible: identical inputs and seed produce
byte-identical data outputs.  Reports and CSVs carry no timestamps; each
command instead writes a ``*_manifest.json`` next to its outputs with the
parameters, seed, package versions and a creation timestamp.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import baseline as bl
from . import metrics as mx
from . import scoring as sc
from .data import Dataset, load_dataset, save_dataset, save_dictionaries, split_dataset
from .datagen import DictSizes, GenConfig, describe_dataset, gen_dataset, save_generator
from .errors import ConfigurationError, DataError, FraudseqError
from .models import (
    AutoencoderConfig,
    NextTokenConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)

DEFAULT_FRACTIONS = (0.9025, 0.0475, 0.05)


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_json(payload, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _manifest(command: str, args: argparse.Namespace, out_dir: Path) -> None:
    params = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
        if k not in ("func", "config")
    }
    _write_json(
        {
            "command": command,
            "parameters": params,
            "versions": {
                "fraudseq": __version__,
                "numpy": np.__version__,
                "python": sys.version.split()[0],
            },
            "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        },
        out_dir / f"{command}_manifest.json",
    )


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_fractions(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise ConfigurationError(f"cannot parse split fractions {text!r}") from None
    if len(parts) != 3:
        raise ConfigurationError("split fractions must be train,validation,test")
    return parts


def _split_from_checkpoint(model, dataset: Dataset):
    info = model.split_info
    if not info:
        raise ConfigurationError("checkpoint carries no split info; retrain via the CLI")
    return split_dataset(dataset, tuple(info["fractions"]), int(info["seed"]))


def _select_split(dataset, splits, which: str):
    if which == "all":
        return dataset
    train_ds, val_ds, test_ds = splits
    return {"train": train_ds, "validation": val_ds, "test": test_ds}[which]


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    out = _out_dir(args)
    config = GenConfig(
        num_patients=args.patients,
        dict_sizes=DictSizes(
            treatment=args.treatments if args.treatments else (2204 if args.profile == "paper" else 200),
            treatment_type=args.treatment_types,
            cost_type=args.cost_types,
            benefit_type=args.benefit_types,
        ),
        mean_length=args.mean_length,
        fraud_rate=args.fraud_rate,
        fraud_kind=args.fraud_kind,
        fraud_intensity=args.intensity,
        zipf_exponent=args.zipf,
        seed=args.seed,
    )
    dataset, generator = gen_dataset(config)
    save_dataset(dataset, out / "dataset.csv")
    save_generator(generator, out / "generator.json")
    save_dictionaries(dataset.dictionaries, out / "dictionaries.json")
    _manifest("gen", args, out)
    summary = describe_dataset(dataset)
    print(
        f"generated {summary.n_patients} patients, {summary.n_visits} visits, "
        f"fraud rate {summary.fraud_rate:.4f}, type imbalance {summary.type_imbalance:.1f}"
    )
    print(f"wrote {out / 'dataset.csv'}")
    return 0


def _train_config(args):
    channel = args.target
    overrides = {"seed": args.seed}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.hidden is not None:
        overrides["hidden_size"] = args.hidden
    if args.lr is not None:
        overrides["base_lr"] = args.lr
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    cls = NextTokenConfig if args.model == "lstm" else AutoencoderConfig
    maker = cls.paper if args.profile == "paper" else cls.desk
    return maker(channel, **overrides)


def cmd_train(args) -> int:
    out = _out_dir(args)
    dataset = load_dataset(args.data)
    fractions = _parse_fractions(args.split_fractions)
    train_ds, _, _ = split_dataset(dataset, fractions, args.seed)
    config = _train_config(args)
    model, history = train(args.model, train_ds, config)
    model.split_info = {"fractions": list(fractions), "seed": args.seed}
    stem = f"{args.model}_{args.target}"
    save_checkpoint(model, out / f"{stem}.npz")
    with open(out / f"{stem}_loss.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_token_loss"])
        for e, loss in enumerate(history):
            writer.writerow([e, _fmt(loss)])
    _manifest("train", args, out)
    last = f"{history[-1]:.4f}" if history else "n/a"
    print(f"trained {args.model} on {len(train_ds.sequences)} patients; final loss {last}")
    print(f"wrote {out / (stem + '.npz')}")
    return 0


def _write_scores(path: Path, scores, flags) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["patient_id", "score", "variant", "flagged"])
        for s, fl in zip(scores, flags):
            writer.writerow([s.patient_id, _fmt(s.score), str(s.variant), fl])


def cmd_score(args) -> int:
    out = _out_dir(args)
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data, dictionaries=model.dictionaries)
    variant = sc.Variant(args.errors, args.pool, args.edf == "on")
    splits = _split_from_checkpoint(model, dataset) if model.split_info else None
    target = _select_split(dataset, splits, args.split) if splits else dataset
    if args.split != "all" and splits is None:
        raise ConfigurationError("scoring a named split needs checkpoint split info")

    stem = f"scores_{model.kind}_{variant}"
    table = None
    if variant.edf:
        if splits is None or not splits[1].sequences:
            raise ConfigurationError("EDF scoring needs a non-empty validation split")
        table = sc.validation_edf_table(model, splits[1].sequences, variant.shape)
        table.to_json(out / f"edf_{model.kind}_{variant.shape}.json")

    scores = sc.score_pipeline(model, target.sequences, variant, table)
    labels = [s.fraud_label for s in target.sequences]
    flags = [""] * len(scores)
    calibration = None
    if all(l is not None for l in labels) and any(labels):
        calibration = sc.calibrate_threshold(scores, labels, args.target_recall)
        flags = [int(s.score >= calibration.threshold) for s in scores]
    _write_scores(out / f"{stem}.csv", scores, flags)
    if args.dump_errors:
        _dump_errors(out / f"errors_{model.kind}_{variant.shape}.csv", model, target, variant, table)
    _manifest("score", args, out)
    if calibration is not None:
        print(
            f"{stem}: threshold {calibration.threshold:.6g}, "
            f"recall {calibration.achieved_recall:.3f}, precision {calibration.achieved_precision:.4f}"
        )
    print(f"wrote {out / (stem + '.csv')}")
    return 0


def _dump_errors(path: Path, model, dataset, variant, table) -> None:
    psets = model.probability_sets(dataset.sequences)
    channel = model.config.target_channel
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["patient_id", "position", "label_id", "error"])
        for seq, pset in zip(dataset.sequences, psets):
            labels = seq.channel_ids(channel)[: seq.length]
            errs = sc.patient_errors(pset, labels, "vector")
            if variant.edf and table is not None:
                errs = sc.edf_transform(errs, table)
            for j, (k, e) in enumerate(zip(errs.label_ids, errs.values)):
                writer.writerow([seq.patient_id, j, int(k), _fmt(e)])


def _read_scores(path: Path):
    if not Path(path).exists():
        raise DataError(f"scores file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise DataError(f"empty scores file: {path}")
    ids = [r["patient_id"] for r in rows]
    values = np.array([float(r["score"]) for r in rows])
    variant = rows[0]["variant"]
    return ids, values, variant


def _curve_csv(path: Path, curve: mx.CurvePoints) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "threshold"])
        for x, y, t in zip(curve.x, curve.y, curve.thresholds):
            writer.writerow([_fmt(x), _fmt(y), _fmt(t)])


def _bucket_rows(buckets: list[mx.LengthBucket]) -> list[dict]:
    return [
        {
            "bucket": b.label,
            "n": b.n,
            "n_pos": b.n_pos,
            "roc_auc": "n/a" if b.roc_auc is None else b.roc_auc,
            "pr_auc": "n/a" if b.pr_auc is None else b.pr_auc,
        }
        for b in buckets
    ]


def _evaluate_scores(values, labels, lengths, target_recall):
    calibration = sc.calibrate_threshold(values, labels, target_recall)
    return {
        "n": int(len(values)),
        "n_pos": int(np.asarray(labels).astype(bool).sum()),
        "roc_auc": mx.roc_auc(values, labels),
        "pr_auc": mx.pr_auc(values, labels),
        "precision_at_target_recall": calibration.achieved_precision,
        "achieved_recall": calibration.achieved_recall,
        "threshold": calibration.threshold,
        "by_length": _bucket_rows(mx.metrics_by_length(values, labels, lengths)),
    }


def cmd_eval(args) -> int:
    out = _out_dir(args)
    dataset = load_dataset(args.data)
    by_id = {s.patient_id: s for s in dataset.sequences}
    report = {"target_recall": args.target_recall, "variants": {}}
    for path in args.scores:
        ids, values, variant = _read_scores(Path(path))
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DataError(f"scored patients missing from dataset: {missing[:3]} ...")
        labels = [by_id[i].fraud_label for i in ids]
        if any(l is None for l in labels):
            raise DataError("evaluation needs fraud labels for every scored patient")
        lengths = [by_id[i].length for i in ids]
        key = Path(path).stem
        report["variants"][key] = {"variant": variant} | _evaluate_scores(
            values, labels, lengths, args.target_recall
        )
        _curve_csv(out / f"roc_{key}.csv", mx.curves(values, labels, "roc"))
        _curve_csv(out / f"pr_{key}.csv", mx.curves(values, labels, "pr"))
    _write_json(report, out / "eval_report.json")
    _manifest("eval", args, out)
    for key, row in report["variants"].items():
        print(
            f"{key}: roc_auc {row['roc_auc']:.4f}, pr_auc {row['pr_auc']:.4f}, "
            f"precision@recall {row['precision_at_target_recall']:.4f}"
        )
    print(f"wrote {out / 'eval_report.json'}")
    return 0


def cmd_baseline(args) -> int:
    out = _out_dir(args)
    dataset = load_dataset(args.data)
    fractions = _parse_fractions(args.split_fractions)
    train_ds, _, test_ds = split_dataset(dataset, fractions, args.seed)
    sg = bl.SkipGramConfig(
        embed_size=args.embed,
        window=args.window,
        negative_samples=args.negatives,
        epochs=args.sg_epochs,
        seed=args.seed,
    )
    forest_cfg = bl.IsolationForestConfig(num_trees=args.trees, subsample_size=args.subsample)
    scores, _ = bl.run_baseline(
        train_ds.sequences,
        test_ds.sequences,
        args.target,
        dataset.dictionaries[args.target].size,
        sg,
        forest_cfg,
        args.seed,
    )
    labels = [s.fraud_label for s in test_ds.sequences]
    result = bl.baseline_classify(scores, labels if all(l is not None for l in labels) else None, args.contamination)
    with open(out / "baseline_scores.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["patient_id", "score", "variant", "flagged"])
        for seq, score, flag in zip(test_ds.sequences, scores, result.flags):
            writer.writerow([seq.patient_id, _fmt(score), "isolation_forest", int(flag)])
    payload = {
        "isolation_forest": {
            args.target: {
                "contamination": args.contamination,
                "n_flagged": result.n_flagged,
                "precision": result.precision,
                "recall": result.recall,
            }
        }
    }
    if all(l is not None for l in labels) and any(labels):
        payload["isolation_forest"][args.target]["roc_auc"] = mx.roc_auc(scores, labels)
        payload["isolation_forest"][args.target]["pr_auc"] = mx.pr_auc(scores, labels)
    _write_json(payload, out / "baseline_report.json")
    _manifest("baseline", args, out)
    print(f"baseline flagged {result.n_flagged} of {len(scores)} patients")
    print(f"wrote {out / 'baseline_report.json'}")
    return 0


def _sweep_model(model, dataset, target_recall):
    splits = _split_from_checkpoint(model, dataset)
    _, val_ds, test_ds = splits
    if not val_ds.sequences or not test_ds.sequences:
        raise ConfigurationError("sweep needs non-empty validation and test splits")
    channel = model.config.target_channel
    val_psets = model.probability_sets(val_ds.sequences)
    test_psets = model.probability_sets(test_ds.sequences)
    val_labels_tok = [s.channel_ids(channel)[: s.length] for s in val_ds.sequences]
    tables = {
        shape: sc.build_edf(sc.collect_error_samples(val_psets, val_labels_tok, shape))
        for shape in ("vector", "matrix")
    }

    def scores_for(sequences, psets, variant):
        out = []
        for seq, pset in zip(sequences, psets):
            labels = seq.channel_ids(channel)[: seq.length]
            errs = sc.patient_errors(pset, labels, variant.shape)
            if variant.edf:
                errs = sc.edf_transform(errs, tables[variant.shape])
            out.append(sc.aggregate(errs, variant.pooling))
        return np.asarray(out)

    val_y = [s.fraud_label for s in val_ds.sequences]
    test_y = [s.fraud_label for s in test_ds.sequences]
    test_lengths = [s.length for s in test_ds.sequences]
    rows = {}
    for variant in sc.VARIANT_GRID:
        val_scores = scores_for(val_ds.sequences, val_psets, variant)
        test_scores = scores_for(test_ds.sequences, test_psets, variant)
        row = {"validation_roc_auc": mx.roc_auc(val_scores, val_y)}
        row |= _evaluate_scores(test_scores, test_y, test_lengths, target_recall)
        rows[str(variant)] = row
    best = max(rows, key=lambda k: rows[k]["validation_roc_auc"])
    for key, row in rows.items():
        row["best"] = key == best
    return rows, best


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    report = {"target_recall": args.target_recall, "models": {}}
    checkpoints = {"lstm": args.lstm_checkpoint, "autoencoder": args.autoencoder_checkpoint}
    dataset = None
    for kind, path in checkpoints.items():
        if path is None:
            continue
        model = load_checkpoint(path)
        if dataset is None:
            dataset = load_dataset(args.data, dictionaries=model.dictionaries)
        rows, best = _sweep_model(model, dataset, args.target_recall)
        report["models"][kind] = {"variants": rows, "best_variant": best}
    if not report["models"]:
        raise ConfigurationError("sweep needs at least one checkpoint")
    _write_json(report, out / "sweep_report.json")
    with open(out / "sweep_rows.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["model", "variant", "validation_roc_auc", "test_roc_auc", "test_pr_auc",
             "precision_at_target_recall", "threshold", "best"]
        )
        for kind, entry in report["models"].items():
            for variant, row in entry["variants"].items():
                writer.writerow(
                    [kind, variant, _fmt(row["validation_roc_auc"]), _fmt(row["roc_auc"]),
                     _fmt(row["pr_auc"]), _fmt(row["precision_at_target_recall"]),
                     _fmt(row["threshold"]), int(row["best"])]
                )
    _manifest("sweep", args, out)
    for kind, entry in report["models"].items():
        best = entry["best_variant"]
        row = entry["variants"][best]
        print(f"{kind}: best {best} (val roc {row['validation_roc_auc']:.4f}, "
              f"test roc {row['roc_auc']:.4f})")
    print(f"wrote {out / 'sweep_report.json'}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--config", type=Path, default=None, help="JSON file with flag defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fraudseq",
        description="Unsupervised fraud detection on discrete event sequences",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic labeled dataset")
    p.add_argument("--patients", type=int, default=1000)
    p.add_argument("--treatments", type=int, default=None)
    p.add_argument("--treatment-types", type=int, default=17)
    p.add_argument("--cost-types", type=int, default=11)
    p.add_argument("--benefit-types", type=int, default=24)
    p.add_argument("--mean-length", type=float, default=12.0)
    p.add_argument("--fraud-rate", type=float, default=0.015)
    p.add_argument("--fraud-kind", choices=["substitution", "rare_insertion", "shuffle"],
                   default="substitution")
    p.add_argument("--intensity", type=float, default=0.3)
    p.add_argument("--zipf", type=float, default=1.1)
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on the train split")
    p.add_argument("model", choices=["lstm", "autoencoder"])
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--target", choices=["treatment", "treatment_type"], default="treatment")
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--split-fractions", default="0.9025,0.0475,0.05")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score patients with a trained checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=["train", "validation", "test", "all"], default="test")
    p.add_argument("--errors", choices=["vector", "matrix"], default="vector")
    p.add_argument("--pool", choices=["sum", "max", "mean"], default="sum")
    p.add_argument("--edf", choices=["on", "off"], default="off")
    p.add_argument("--target-recall", type=float, default=0.8)
    p.add_argument("--dump-errors", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="evaluate score files against labels")
    p.add_argument("--scores", type=Path, action="append", required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--target-recall", type=float, default=0.8)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="skip-gram + isolation forest baseline")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--target", choices=["treatment", "treatment_type"], default="treatment")
    p.add_argument("--contamination", type=float, default=0.015)
    p.add_argument("--embed", type=int, default=32)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--sg-epochs", type=int, default=5)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--subsample", type=int, default=256)
    p.add_argument("--split-fractions", default="0.9025,0.0475,0.05")
    _add_common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep", help="evaluate the full variant grid for trained models")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--lstm-checkpoint", type=Path, default=None)
    p.add_argument("--autoencoder-checkpoint", type=Path, default=None)
    p.add_argument("--target-recall", type=float, default=0.8)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def _apply_config_file(parser, args):
    if getattr(args, "config", None) is None:
        return args
    with open(args.config, encoding="utf-8") as fh:
        overrides = json.load(fh)
    defaults = {a.dest: a.default for a in parser._actions}
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise ConfigurationError(f"unknown config key {key!r}")
        # explicit CLI flags win over the config file
        if getattr(args, dest) == defaults.get(dest):
            setattr(args, dest, value)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(parser, args)
        return int(args.func(args) or 0)
    except FraudseqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
