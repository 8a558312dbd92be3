"""Command-line entry point tying the modules into workflows.

Subcommands: ``simulate | train | infer | eval | validate | annotate-serve``.
Exit codes: 0 success, 1 validation failure, 2 runtime error.  Every run
that produces an output directory writes a ``run.f3`` manifest (resolved
settings, seed, versions) sufficient to reproduce it.  The environment
variable ``F3_DATA_DIR`` supplies the default dataset root.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dataset_io import ManifestError, read_manifest, read_predictions, write_predictions
from .f3ed import F3EDConfig, F3EDModel, infer_dataset, load_checkpoint, train
from .metrics import evaluate
from .rulebook import RuleError, hard_only, load_rules
from .simulator import SimConfig, generate, read_simconfig
from .taxonomy import TaxonomyError


def _write_run_manifest(out_dir, command, settings):
    lines = ["f3-run v1",
             f"command {command}",
             f"package {__version__}",
             f"numpy {np.__version__}",
             f"python {sys.version_info.major}.{sys.version_info.minor}"]
    for key in sorted(settings):
        value = settings[key]
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"arg {key} {value}")
    Path(out_dir, "run.f3").write_text("\n".join(lines) + "\n")


def _data_dir(args):
    data = args.data or os.environ.get("F3_DATA_DIR")
    if not data:
        raise ManifestError("no dataset directory (use --data or F3_DATA_DIR)")
    return Path(data)


def cmd_simulate(args):
    config = read_simconfig(args.config) if args.config else SimConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.clips is not None:
        config.num_clips = args.clips
    if args.mode:
        config.render_mode = args.mode
    if args.taxonomy:
        config.taxonomy_name = args.taxonomy
    out = Path(args.out)
    clips, _ = generate(config, out)
    _write_run_manifest(out, "simulate", asdict(config))
    events = sum(len(c.events) for c in clips)
    print(f"wrote {len(clips)} clips ({events} events) to {out}")
    return 0


def _model_config(args):
    config = F3EDConfig()
    for name in ("epochs", "seed", "stride", "granularity", "batch_size"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    if getattr(args, "clip_length", None) is not None:
        config.clip_length = args.clip_length
    if getattr(args, "head", None):
        config.head_mode = args.head
    if getattr(args, "no_ctx", False):
        config.ctx_enabled = False
    if getattr(args, "no_gru", False):
        config.ve_gru = False
    if getattr(args, "fg_weight", None) is not None:
        config.fg_weight = args.fg_weight
    return config


def cmd_train(args):
    data = _data_dir(args)
    config = _model_config(args)
    clips, tax = read_manifest(data / "manifest.f3")
    if clips and clips[0].source_kind == "features":
        from .dataset_io import load_features
        config.input_dim = load_features(data / clips[0].source_path).shape[1]
        config.render_mode = "features"
    else:
        config.render_mode = "pixels"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(config, data, checkpoint_path=out / "model.f3ck",
                   quiet=not args.verbose)
    _write_run_manifest(out, "train", {**asdict(config), "data": data})
    last = result.log[-1] if result.log else {}
    print(f"trained {len(result.log)} epochs; best val {result.best_val:.4f} "
          f"at epoch {result.best_epoch}; final train loss "
          f"{last.get('train_loss', float('nan')):.4f}")
    print(f"checkpoint: {out / 'model.f3ck'}")
    return 0


def cmd_infer(args):
    data = _data_dir(args)
    model, config = load_checkpoint(args.checkpoint)
    clips, tax = read_manifest(data / "manifest.f3")
    rules = load_rules(tax)
    preds = infer_dataset(model, clips, data, rules, split=args.split)
    write_predictions(preds, args.out, tax)
    n = sum(len(v) for v in preds.values())
    print(f"wrote {n} events across {len(preds)} clips to {args.out}")
    return 0


def cmd_eval(args):
    gt_clips, tax = read_manifest(args.gt)
    head = Path(args.pred).read_text(errors="ignore").lstrip()[:24]
    if head.startswith("f3-manifest"):
        pred_clips, _ = read_manifest(args.pred, tax)
        preds = {c.clip_id: [(f, vec, None, 1.0) for f, vec in c.events]
                 for c in pred_clips}
    else:
        preds = read_predictions(args.pred, tax)
    gt = {c.clip_id: c.events for c in gt_clips if c.clip_id in preds}
    if args.split:
        keep = {c.clip_id for c in gt_clips if c.split == args.split}
        gt = {k: v for k, v in gt.items() if k in keep}
        preds = {k: v for k, v in preds.items() if k in keep}
    pred_events = {cid: [(f, vec) for f, vec, _p, _c in evs]
                   for cid, evs in preds.items()}
    rules = load_rules(tax)
    contexts = {c.clip_id: c.ctx for c in gt_clips}
    grans = [args.granularity] if args.granularity else \
        (sorted(tax.granularities) or ["full"])
    reports = evaluate(pred_events, gt, tax, tol=args.tol,
                       granularities=grans, rules=rules, contexts=contexts)
    for name in grans:
        for line in reports[name].summary_lines():
            print(line)
    if args.json:
        import json
        summary = {name: {
            "edit": r.edit, "f1_evt": r.f1_evt, "f1_elm": r.f1_elm,
            "f1_lcl": r.f1_lcl, "tol": r.tol, "clips": r.num_clips,
            "hard_violations": r.hard_violations,
            "soft_violations": r.soft_violations,
        } for name, r in reports.items()}
        Path(args.json).write_text(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_validate(args):
    try:
        clips, tax = read_manifest(args.manifest)
    except ManifestError as exc:
        print(f"INVALID: {exc}")
        return 1
    rules = load_rules(tax)
    problems = 0
    for clip in clips:
        for _f, vec in clip.events:
            for v in hard_only(rules.check_combination(vec)):
                print(f"{clip.clip_id}: {v.message}")
                problems += 1
        for v in hard_only(rules.validate_sequence(
                [vec for _f, vec in clip.events], clip.ctx)):
            print(f"{clip.clip_id}: {v.message}")
            problems += 1
    if problems:
        print(f"INVALID: {problems} hard rule violations")
        return 1
    print(f"OK: {len(clips)} clips, "
          f"{sum(len(c.events) for c in clips)} events")
    return 0


def cmd_annotate_serve(args):
    import uvicorn

    from .annotation import create_app

    app = create_app(args.data_dir, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="f3", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="simconfig.f3 file (flags override it)")
    s.add_argument("--seed", type=int)
    s.add_argument("--clips", type=int)
    s.add_argument("--mode", choices=["features", "pixels"])
    s.add_argument("--taxonomy")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("train", help="train a model on a dataset")
    s.add_argument("--data", help="dataset dir (default: $F3_DATA_DIR)")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--stride", type=int)
    s.add_argument("--clip-length", dest="clip_length", type=int)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--granularity")
    s.add_argument("--head", choices=["multi-label", "multi-class"])
    s.add_argument("--fg-weight", dest="fg_weight", type=float)
    s.add_argument("--no-ctx", action="store_true")
    s.add_argument("--no-gru", action="store_true")
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("infer", help="detect events with a trained model")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", help="dataset dir (default: $F3_DATA_DIR)")
    s.add_argument("--out", required=True)
    s.add_argument("--split", default=None)
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("eval", help="score predictions against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--tol", type=int, default=1)
    s.add_argument("--granularity", choices=["high", "mid", "low"])
    s.add_argument("--split")
    s.add_argument("--json", help="also write a machine-readable summary")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("validate", help="check a manifest and its rules")
    s.add_argument("--manifest", required=True)
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("annotate-serve", help="run the annotation backend")
    s.add_argument("--data-dir", required=True)
    s.add_argument("--port", type=int, default=8313)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--frontend", help="built UI directory to serve at /")
    s.set_defaults(fn=cmd_annotate_serve)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ManifestError, TaxonomyError, RuleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:          # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
