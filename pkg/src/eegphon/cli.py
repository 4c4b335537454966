"""Command-line interface: synth, preprocess, train, evaluate, controls.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Every emitted report embeds the effective configuration and a content hash of
its inputs, and no report contains wall-clock state, so reruns with identical
inputs and seed are checksum-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np
import torch

from . import __version__
from .core import EpochSet, expanded_split, fixed_split
from .data_io import content_hash, find_subject_dirs, load_container, \
    load_epochs, save_epochs
from .dda import DdaParams, dda_pipeline
from .erp import erp_pipeline
from .evaluation import FoldReport, LosoRunConfig, filter_null_only, \
    loso_acoustic_control, loso_block_permutation, loso_pooled_control, \
    mask_early_window, run_loso
from .metrics import classification_metrics
from .model import ModelConfig, batched_logits, ensemble_logits, \
    load_checkpoint, save_checkpoint
from .synth import SynthSpec, generate_synthetic
from .training import TrainConfig, build_model, task_targets, train, \
    zscore_per_sample

TASK_CHOICES = ("phoneme", "place", "manner", "voicing", "category",
                "complexity")


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2, default=_jsonable)
        f.write("\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _load_spec(path: str | None, seed: int | None) -> SynthSpec:
    fields = {}
    if path is not None:
        with open(path) as f:
            raw = json.load(f)
        valid = set(SynthSpec.__dataclass_fields__)
        for key, value in raw.items():
            if key not in valid:
                raise ValueError(f"unknown synth spec field {key!r}")
            if isinstance(value, list):
                value = tuple(value)
            fields[key] = value
    if seed is not None:
        fields["seed"] = seed
    return SynthSpec(**fields)


def cmd_synth(args) -> int:
    spec = _load_spec(args.spec, args.seed)
    paths = generate_synthetic(spec, args.output)
    for p in paths:
        print(p)
    print(f"wrote {len(paths)} subject containers to {args.output}")
    return 0


def cmd_preprocess(args) -> int:
    subject_dirs = find_subject_dirs(args.input)
    input_files = []
    for d in subject_dirs:
        for name in ("manifest.json", "raw.f32", "events.tsv"):
            input_files.append(os.path.join(d, name))
    inputs_hash = content_hash(*input_files)

    per_subject = []
    params: dict = {"feature": args.feature, "seed": args.seed}
    for d in subject_dirs:
        rec = load_container(d)
        if args.feature in ("erp", "erp-wideband"):
            band = (0.5, 100.0) if args.feature == "erp-wideband" else (0.5, 40.0)
            reject = None if args.no_reject else 150.0
            epochs, _ica = erp_pipeline(rec, band=band, reject_uv=reject,
                                        seed=args.seed)
            params.update({"target_fs": 256.0, "notch_hz": 50.0,
                           "band": list(band), "reject_uv": reject,
                           "ica_components": 15})
        elif args.feature == "dda":
            dda_params = DdaParams()
            epochs = dda_pipeline(rec, dda_params)
            params.update({"window_len": dda_params.window_len,
                           "shift": dda_params.shift,
                           "tau1": dda_params.tau1, "tau2": dda_params.tau2,
                           "stride": dda_params.stride})
        else:
            raise ValueError(f"unknown feature path {args.feature!r}")
        per_subject.append(epochs)

    t_min = min(e.n_times for e in per_subject)
    cropped = []
    for e in per_subject:
        if e.n_times != t_min:
            warnings.warn(f"cropping epochs from T={e.n_times} to T={t_min}")
        cropped.append(e.data[:, :t_min, :])
    merged = EpochSet(
        data=np.concatenate(cropped, axis=0),
        labels=tuple(lab for e in per_subject for lab in e.labels),
        feature_kind=per_subject[0].feature_kind,
        window_ms=per_subject[0].window_ms,
        n_edge_skipped=sum(e.n_edge_skipped for e in per_subject),
        n_amplitude_rejected=sum(e.n_amplitude_rejected for e in per_subject))
    provenance = {"parameters": params, "inputs_hash": inputs_hash,
                  "version": __version__}
    save_epochs(args.output, merged, provenance)
    print(f"wrote {merged.n_epochs} epochs "
          f"(T={merged.n_times}, F={merged.n_features}, "
          f"skipped={merged.n_edge_skipped}, "
          f"rejected={merged.n_amplitude_rejected}) to {args.output}")
    return 0


def _model_config(args, tasks: tuple[str, ...]) -> ModelConfig:
    return ModelConfig(d_model=args.d_model, n_blocks=args.blocks,
                       n_heads=args.heads,
                       frontend_channels=args.frontend_channels,
                       head_hidden=args.head_hidden, dropout=args.dropout,
                       tasks=tasks, ctc_enabled=args.ctc)


def _train_config(args) -> TrainConfig:
    return TrainConfig(lr_max=args.lr, warmup_epochs=args.warmup,
                       max_epochs=args.epochs, patience=args.patience,
                       batch=args.batch, seed=args.seed,
                       augment=not args.no_augment,
                       mixup_alpha=args.mixup_alpha)


def _config_echo(cfg) -> dict:
    """Full effective configuration of a (frozen) config dataclass."""
    out = {}
    for name in cfg.__dataclass_fields__:
        value = getattr(cfg, name)
        out[name] = list(value) if isinstance(value, tuple) else value
    return out


def _split_for(name: str, subjects) -> "DatasetSplit":
    if name == "fixed":
        return fixed_split(subjects)
    if name == "expanded":
        return expanded_split(subjects)
    raise ValueError(f"--split {name!r} is not a single-model split; "
                     f"use evaluate --split loso for cross-validation")


def cmd_train(args) -> int:
    epochs = load_epochs(args.input)
    inputs_hash = content_hash(args.input)
    tasks = tuple(args.task) if args.task else ("phoneme", "place", "manner",
                                                "voicing")
    split = _split_for(args.split, epochs.subjects())
    split.check()
    from .evaluation import subject_mask
    train_set = epochs.select(subject_mask(epochs.labels, split.train_subjects))
    val_set = epochs.select(subject_mask(epochs.labels, split.val_subjects))
    if val_set.n_epochs == 0:
        val_set = None

    model_cfg = _model_config(args, tasks)
    train_cfg = _train_config(args)
    model = build_model(model_cfg, epochs.n_features, seed=args.seed)
    result = train(model, train_set, val_set, train_cfg)

    save_checkpoint(args.output, model, extra_meta={
        "inputs_hash": inputs_hash, "split": args.split,
        "best_epoch": result.best_epoch, "seed": args.seed,
        "feature_kind": epochs.feature_kind,
        "train_config": _config_echo(train_cfg)})
    history_path = args.output + ".history.jsonl"
    with open(history_path, "w") as f:
        for record in result.history:
            f.write(json.dumps(record, sort_keys=True, default=_jsonable) + "\n")
    print(f"trained {len(result.history)} epochs "
          f"(best epoch {result.best_epoch}, "
          f"early stop: {result.stopped_early}); "
          f"checkpoint at {args.output}")
    return 0


def _fold_row(r: FoldReport) -> dict:
    return {"fold_id": r.fold_id, "test_subject": r.test_subject,
            "n_samples": r.n_samples, "accuracy": r.accuracy,
            "macro_f1": r.macro_f1, "top3": r.top3,
            "confusion": r.confusion, "wer_real": r.wer_real,
            "wer_pseudo": r.wer_pseudo, "failed": r.failed}


def cmd_evaluate(args) -> int:
    epoch_sets = []
    for path in args.input:
        es = load_epochs(path)
        if args.null_only:
            es = filter_null_only(es)
        if args.mask_early:
            es = mask_early_window(es)
        epoch_sets.append(es)
    inputs_hash = content_hash(*args.input)
    os.makedirs(args.output, exist_ok=True)

    if args.checkpoint:
        return _evaluate_checkpoints(args, epoch_sets, inputs_hash)

    if len(epoch_sets) != 1:
        raise ValueError("LOSO evaluation takes exactly one --input")
    epochs = epoch_sets[0]
    if args.split != "loso":
        raise ValueError("evaluate without --checkpoint runs LOSO; "
                         "pass --split loso")
    tasks = tuple(args.task) if args.task else ("phoneme",)
    cfg_echo = {"decoder": args.decoder, "tasks": list(tasks),
                "seed": args.seed, "null_only": args.null_only,
                "mask_early": args.mask_early, "wer": args.wer}
    if args.decoder == "conformer":
        cfg_echo["model_config"] = _config_echo(
            _model_config(args, ("phoneme", "place", "manner", "voicing")))
        cfg_echo["train_config"] = _config_echo(_train_config(args))
    all_summaries = {}
    for task in tasks:
        run_cfg = LosoRunConfig(
            task=task, decoder=args.decoder, seed=args.seed,
            compute_wer=args.wer and args.decoder == "conformer",
            ctc_decode=args.ctc_decode,
            model=_model_config(args, ("phoneme", "place", "manner",
                                       "voicing"))
            if args.decoder == "conformer" else None,
            train=_train_config(args) if args.decoder == "conformer" else None)
        reports, summary = run_loso(epochs, run_cfg)
        all_summaries[task] = summary
        with open(os.path.join(args.output, f"folds_{task}.jsonl"), "w") as f:
            for r in reports:
                f.write(json.dumps(_fold_row(r), sort_keys=True,
                                   default=_jsonable) + "\n")
        if "wer_real_mean" in summary or "wer_pseudo_mean" in summary:
            rows = []
            for kind in ("real", "pseudo"):
                if f"wer_{kind}_mean" in summary:
                    rows.append([epochs.feature_kind,
                                 "Real Words" if kind == "real" else "Pseudowords",
                                 "LOSO", f"{summary[f'wer_{kind}_mean']:.6f}",
                                 f"{summary[f'wer_{kind}_std']:.6f}",
                                 summary["folds"], summary[f"words_{kind}"]])
            _write_csv(os.path.join(args.output, "wer.csv"),
                       ["feature", "word_type", "eval", "wer_mean",
                        "wer_std", "folds", "samples"], rows)
    _write_json(os.path.join(args.output, "summary.json"),
                {"config": cfg_echo, "inputs_hash": inputs_hash,
                 "summaries": all_summaries})
    print(f"LOSO evaluation written to {args.output}")
    return 0


def _evaluate_checkpoints(args, epoch_sets: list[EpochSet],
                          inputs_hash: str) -> int:
    """Evaluate one checkpoint, or average the logits of two.

    For a cross-pathway ensemble (ERP + DDA models), pass one --input per
    --checkpoint; their trials must align label-for-label.
    """
    from .core import TASK_CLASSES
    from .evaluation import subject_mask, task_trial_mask
    models = [load_checkpoint(path)[0] for path in args.checkpoint]
    if args.ensemble and len(models) != 2:
        raise ValueError("--ensemble needs exactly two --checkpoint paths")
    if len(epoch_sets) == 1:
        epoch_sets = epoch_sets * len(models)
    if len(epoch_sets) != len(models):
        raise ValueError(f"{len(models)} checkpoints but "
                         f"{len(epoch_sets)} --input archives")
    if any(es.labels != epoch_sets[0].labels for es in epoch_sets):
        raise ValueError("--input archives do not align trial-for-trial")

    split = _split_for(args.split, epoch_sets[0].subjects())
    eval_subjects = split.val_subjects or split.test_subjects
    in_eval = subject_mask(epoch_sets[0].labels, eval_subjects)
    subsets = [es.select(in_eval) for es in epoch_sets]
    tasks = tuple(args.task) if args.task else ("phoneme",)
    results = {}
    for task in tasks:
        sel = task_trial_mask(subsets[0].labels, task)
        targets = task_targets(subsets[0].labels, task)[sel]
        logit_list = [
            batched_logits(model, zscore_per_sample(subset.data[sel]), task)
            for model, subset in zip(models, subsets)]
        if args.ensemble:
            logits = 0.5 * (logit_list[0] + logit_list[1])
            preds = ensemble_logits(logit_list[0], logit_list[1])
        else:
            logits = logit_list[0]
            preds = np.argmax(logits, axis=1)
        m = classification_metrics(logits, targets, TASK_CLASSES[task])
        results[task] = {"accuracy": m.accuracy, "macro_f1": m.macro_f1,
                         "top3": m.top3, "n_samples": int(sel.sum()),
                         "confusion": m.confusion,
                         "pred_counts": np.bincount(
                             preds, minlength=TASK_CLASSES[task])}
    payload = {"config": {"checkpoints": list(args.checkpoint),
                          "ensemble": bool(args.ensemble),
                          "split": args.split, "tasks": list(tasks),
                          "null_only": args.null_only,
                          "mask_early": args.mask_early},
               "inputs_hash": inputs_hash, "results": results}
    _write_json(os.path.join(args.output, "metrics.json"), payload)
    print(f"checkpoint evaluation written to {args.output}")
    return 0


def cmd_controls(args) -> int:
    epochs = load_epochs(args.input)
    inputs_hash = content_hash(args.input)
    os.makedirs(args.output, exist_ok=True)
    tasks = tuple(args.task) if args.task else ("phoneme", "manner", "place")
    cfg_echo = {"tasks": list(tasks), "seed": args.seed,
                "null_only": args.null_only, "mask_early": args.mask_early,
                "permute": args.permute, "acoustic": args.acoustic,
                "bootstrap": args.bootstrap}
    working = filter_null_only(epochs) if args.null_only else epochs

    payload: dict = {"config": cfg_echo, "inputs_hash": inputs_hash,
                     "feature": epochs.feature_kind}
    csv_rows = []
    for task in tasks:
        base = loso_pooled_control(working, task, n_boot=args.bootstrap,
                                   seed=args.seed)
        payload.setdefault("base", {})[task] = base
        csv_rows.append([epochs.feature_kind, task, "base",
                         f"{base['acc_mean']:.6f}", f"{base['ci_low']:.6f}",
                         f"{base['ci_high']:.6f}", base["folds"]])
        if args.mask_early:
            masked = loso_pooled_control(mask_early_window(working), task,
                                         n_boot=args.bootstrap, seed=args.seed)
            masked["delta_vs_base"] = masked["acc_mean"] - base["acc_mean"]
            payload.setdefault("mask_early", {})[task] = masked
            csv_rows.append([epochs.feature_kind, task, "masked_0_200ms",
                             f"{masked['acc_mean']:.6f}",
                             f"{masked['ci_low']:.6f}",
                             f"{masked['ci_high']:.6f}", masked["folds"]])
        if args.acoustic:
            acoustic = loso_acoustic_control(working, task)
            payload.setdefault("acoustic", {})[task] = acoustic
            csv_rows.append([epochs.feature_kind, task, "acoustic_only",
                             f"{acoustic['acc_mean']:.6f}", "", "",
                             acoustic["folds"]])
        if args.permute > 0:
            perm = loso_block_permutation(working, task, n_perm=args.permute,
                                          seed=args.seed)
            payload.setdefault("permutation", {})[task] = {
                "true_acc": perm.true_acc,
                "perm_acc_mean": float(np.mean(perm.perm_accs)),
                "delta": perm.true_acc - float(np.mean(perm.perm_accs)),
                "empirical_p": perm.empirical_p,
                "n_perm": len(perm.perm_accs)}
    _write_csv(os.path.join(args.output, "controls.csv"),
               ["feature", "task", "control", "acc_mean", "ci_low",
                "ci_high", "folds"], csv_rows)
    if "permutation" in payload:
        rows = [[epochs.feature_kind, task, f"{d['true_acc']:.6f}",
                 f"{d['perm_acc_mean']:.6f}", f"{d['delta']:.6f}",
                 f"{d['empirical_p']:.6f}"]
                for task, d in payload["permutation"].items()]
        _write_csv(os.path.join(args.output, "permutation.csv"),
                   ["feature", "task", "true_acc", "perm_acc_mean", "delta",
                    "empirical_p"], rows)
    _write_json(os.path.join(args.output, "controls.json"), payload)
    print(f"controls written to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegphon",
        description="Dual-pathway EEG phoneme decoding benchmark")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate synthetic containers")
    p_synth.add_argument("--spec", help="JSON file of SynthSpec overrides")
    p_synth.add_argument("--output", required=True)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.set_defaults(func=cmd_synth)

    p_prep = sub.add_parser("preprocess", help="run a feature path end-to-end")
    p_prep.add_argument("--input", required=True,
                        help="container dir or parent of subject dirs")
    p_prep.add_argument("--feature", required=True,
                        choices=("erp", "erp-wideband", "dda"))
    p_prep.add_argument("--output", required=True)
    p_prep.add_argument("--seed", type=int, default=0)
    p_prep.add_argument("--no-reject", action="store_true",
                        help="disable the 150 uV amplitude rejection")
    p_prep.set_defaults(func=cmd_preprocess)

    def add_model_args(p):
        p.add_argument("--d-model", type=int, default=256)
        p.add_argument("--blocks", type=int, default=4)
        p.add_argument("--heads", type=int, default=8)
        p.add_argument("--frontend-channels", type=int, default=64)
        p.add_argument("--head-hidden", type=int, default=128)
        p.add_argument("--dropout", type=float, default=0.2)
        p.add_argument("--ctc", action="store_true")

    def add_train_args(p):
        p.add_argument("--epochs", type=int, default=150)
        p.add_argument("--warmup", type=int, default=10)
        p.add_argument("--patience", type=int, default=30)
        p.add_argument("--batch", type=int, default=64)
        p.add_argument("--lr", type=float, default=5e-4)
        p.add_argument("--mixup-alpha", type=float, default=0.1)
        p.add_argument("--no-augment", action="store_true")

    p_train = sub.add_parser("train", help="train one model on a fixed split")
    p_train.add_argument("--input", required=True)
    p_train.add_argument("--output", required=True)
    p_train.add_argument("--task", action="append", choices=TASK_CHOICES)
    p_train.add_argument("--split", default="fixed",
                         choices=("fixed", "expanded"))
    p_train.add_argument("--seed", type=int, required=True)
    add_model_args(p_train)
    add_train_args(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate",
                            help="LOSO cross-validation or checkpoint eval")
    p_eval.add_argument("--input", action="append", required=True,
                        help="epochs archive; repeat once per checkpoint "
                             "for a cross-pathway ensemble")
    p_eval.add_argument("--output", required=True)
    p_eval.add_argument("--checkpoint", action="append", default=[])
    p_eval.add_argument("--ensemble", action="store_true",
                        help="average logits of two checkpoints")
    p_eval.add_argument("--split", default="loso",
                        choices=("loso", "fixed", "expanded"))
    p_eval.add_argument("--decoder", default="conformer",
                        choices=("conformer", "lr", "lda"))
    p_eval.add_argument("--task", action="append", choices=TASK_CHOICES)
    p_eval.add_argument("--seed", type=int, required=True)
    p_eval.add_argument("--wer", action="store_true",
                        help="compute CVC word error rates")
    p_eval.add_argument("--ctc-decode", action="store_true",
                        help="decode words via CTC best path instead of "
                             "position sub-epochs")
    p_eval.add_argument("--null-only", action="store_true")
    p_eval.add_argument("--mask-early", action="store_true")
    add_model_args(p_eval)
    add_train_args(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_ctl = sub.add_parser("controls", help="confound-control suite")
    p_ctl.add_argument("--input", required=True)
    p_ctl.add_argument("--output", required=True)
    p_ctl.add_argument("--task", action="append", choices=TASK_CHOICES)
    p_ctl.add_argument("--seed", type=int, required=True)
    p_ctl.add_argument("--null-only", action="store_true")
    p_ctl.add_argument("--mask-early", action="store_true")
    p_ctl.add_argument("--permute", type=int, default=0, metavar="N")
    p_ctl.add_argument("--acoustic", action="store_true")
    p_ctl.add_argument("--bootstrap", type=int, default=10000)
    p_ctl.set_defaults(func=cmd_controls)

    for p in (p_synth, p_prep, p_train, p_eval, p_ctl):
        p.add_argument("--jobs", type=int, default=1,
                       help="worker thread bound (1 = bit-reproducible)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    torch.set_num_threads(max(1, getattr(args, "jobs", 1)))
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:   # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
