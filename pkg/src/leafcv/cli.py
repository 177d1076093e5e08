"""Command-line entry point: ``leafcv synth|ingest|extract|train|eval|gradcam|chart``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, LeafCVError, UsageError
from .features import make_params

log = logging.getLogger("leafcv")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fractions(text: str):
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad split fractions {text!r}") from exc
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("split needs three comma-separated fractions")
    return parts


def _params(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"descriptor parameter {pair!r} must look like key=value")
        out[key] = json.loads(value) if value not in ("true", "false") else value == "true"
    return out


def cmd_synth(args):
    from .synthdata import SynthConfig, generate

    cfg = SynthConfig(per_class=args.per_class, image_size=args.size, seed=args.seed,
                      lesion_boxes=not args.no_boxes, imbalanced=args.imbalanced)
    entries = generate(cfg, args.out)
    print(f"wrote {len(entries)} images to {args.out}")


def cmd_ingest(args):
    from .pipeline.dataset import ingest, split

    manifest = ingest(args.data_dir, skip_bad=args.skip_bad)
    if args.split:
        manifest = split(manifest, args.split, args.seed)
    manifest.save(args.out)
    counts = {name: sum(s.class_id == i for s in manifest.samples) for i, name in enumerate(manifest.classes)}
    print(json.dumps(counts, sort_keys=True))


def cmd_extract(args):
    from .pipeline.cache import extract_features
    from .pipeline.dataset import DatasetManifest

    manifest = DatasetManifest.load(args.manifest)
    params = make_params(args.kind, _params(args.param))
    cache = extract_features(manifest, args.kind, params, args.size, args.out, workers=args.workers)
    print(f"{args.kind}: {cache.count} vectors of dim {cache.dim} -> {args.out}")


def _run_config(args):
    from .pipeline.runs import RunConfig

    d = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("data", "representation", "model", "seed"):
        value = getattr(args, key)
        if value is not None:
            d[key] = value
    if args.image_size is not None:
        d["image_size"] = args.image_size
    if args.param:
        d["descriptor"] = {**d.get("descriptor", {}), **_params(args.param)}
    train = dict(d.get("train", {}))
    if args.epochs is not None:
        train["epochs"] = args.epochs
    if args.lr is not None:
        train["learning_rate"] = args.lr
    if args.seed is not None:
        train.setdefault("seed", args.seed)
    d["train"] = train
    if args.synth_per_class is not None:
        d["synth"] = {**(d.get("synth") or {}), "per_class": args.synth_per_class}
    try:
        return RunConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(args):
    from .pipeline.checkpoint import save_checkpoint
    from .pipeline.dataset import DatasetManifest
    from .pipeline.runs import run_training, write_report

    cfg = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest.load(args.manifest) if args.manifest else None
    result = run_training(cfg, manifest, workdir=out, cache_dir=out / "cache")
    save_checkpoint(out / "checkpoint.lfck", result.checkpoint)
    result.manifest.save(out / "manifest.json")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "history.json").write_text(json.dumps(result.checkpoint.history, indent=2) + "\n")
    for split_name, rep in result.reports.items():
        write_report(out / f"report_{split_name}.json", rep, result.confusions[split_name],
                     result.checkpoint, split_name)
        print(f"{split_name}: accuracy {rep.accuracy:.4f} macro-F1 {rep.macro_f1:.4f}")


def cmd_eval(args):
    from .pipeline.checkpoint import load_checkpoint
    from .pipeline.dataset import DatasetManifest
    from .pipeline.runs import evaluate, write_report

    ckpt = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.load(args.manifest)
    rep, cm = evaluate(ckpt, manifest, args.split)
    write_report(args.out, rep, cm, ckpt, args.split)
    print(f"{args.split}: accuracy {rep.accuracy:.4f} macro-F1 {rep.macro_f1:.4f}")


def cmd_gradcam(args):
    from .pipeline.checkpoint import load_checkpoint
    from .pipeline.dataset import DatasetManifest
    from .pipeline.runs import gradcam_batch

    stats = gradcam_batch(load_checkpoint(args.checkpoint), DatasetManifest.load(args.manifest),
                          args.split, args.out, alpha=args.alpha, limit=args.limit)
    print(json.dumps(stats["summary"], sort_keys=True))


def cmd_chart(args):
    from .pipeline.chart import emit_chart

    reports = []
    for item in args.report:
        label, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--report expects label=path, got {item!r}")
        reports.append((label, json.loads(Path(path).read_text())))
    metrics = ("accuracy", "macro_f1") if args.f1 else ("accuracy",)
    emit_chart(reports, args.out, metrics)
    print(f"wrote {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="leafcv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate the synthetic leaf dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, default=50)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--imbalanced", action="store_true", help="mimic the real dataset's class proportions")
    s.add_argument("--no-boxes", action="store_true", help="omit lesion boxes from manifest.json")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="scan a directory-per-class dataset into a manifest")
    s.add_argument("data_dir")
    s.add_argument("--out", required=True)
    s.add_argument("--split", type=_fractions, help="train,val,test fractions, e.g. 0.7,0.15,0.15")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--skip-bad", action="store_true")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("extract", help="compute a feature cache")
    s.add_argument("--manifest", required=True)
    s.add_argument("--kind", choices=("raw", "hog", "lbp"), required=True)
    s.add_argument("--size", type=int, default=224)
    s.add_argument("--param", action="append", help="descriptor parameter key=value")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", help="train a model and write checkpoint and reports")
    s.add_argument("--config")
    s.add_argument("--manifest", help="pre-split manifest (otherwise data/synth from the config)")
    s.add_argument("--data")
    s.add_argument("--synth-per-class", type=int)
    s.add_argument("--representation", choices=("raw", "hog", "lbp"))
    s.add_argument("--model", choices=("small-cnn", "linear", "mlp"))
    s.add_argument("--param", action="append", help="descriptor parameter key=value")
    s.add_argument("--image-size", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcam", help="render Grad-CAM overlays and localization stats")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--alpha", type=float, default=0.4)
    s.add_argument("--limit", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gradcam)

    s = sub.add_parser("chart", help="SVG bar chart comparing report.json files")
    s.add_argument("--report", action="append", required=True, help="label=path/to/report.json")
    s.add_argument("--f1", action="store_true", help="add macro-F1 bars")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_chart)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except LeafCVError as exc:
        print(f"leafcv: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"leafcv: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
