"""``srdetbench`` command-line entry point.

Every subcommand is an adapter over library calls. Exit codes: 0 success,
2 usage or configuration error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .errors import BenchError, ConfigError, InvalidConfig

log = logging.getLogger("srdetbench")

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, workers: bool = False):
    g = p.add_argument_group("common options")
    g.add_argument("--seed", type=int, default=None, help="seed for every random stream (default 0)")
    g.add_argument("--config", type=Path, default=None, help="TOML file supplying defaults for this command")
    g.add_argument("--out", type=Path, default=None, help="output file or directory")
    g.add_argument("--json", action="store_true", help="print machine-readable JSON instead of a table")
    if workers:
        g.add_argument("--workers", type=int, default=None, help="maximum number of frame workers (default 1)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="srdetbench", description="Super-resolution for small-object detection benchmark.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("degrade", help="downscale every image in a directory")
    p.add_argument("input", type=Path, help="directory of source images")
    p.add_argument("--factor", type=int, default=None, help="integer reduction factor (required)")
    p.add_argument("--kernel", default=None, help="nearest, bilinear or bicubic (default bicubic)")
    p.add_argument("--no-modcrop", action="store_true", help="do not crop to a multiple of the factor first")
    _common(p)

    p = sub.add_parser("train-sr", help="train an RLFN model and save a checkpoint")
    p.add_argument("images", type=Path, nargs="?", help="directory of high-resolution training images")
    p.add_argument("--synthetic", type=int, default=None, metavar="N", help="train on N generated textures instead")
    p.add_argument("--scale", type=int, default=None, help="upscaling factor: 2, 3, 4 or 6 (default 2)")
    p.add_argument("--tiny", action="store_true", help="use the small 16-channel, 2-block preset")
    p.add_argument("--channels", type=int, default=None, help="feature channels (default 52)")
    p.add_argument("--blocks", type=int, default=None, help="number of residual blocks (default 4)")
    p.add_argument("--init", default=None, help="interp or default (default interp)")
    p.add_argument("--steps", type=int, default=None, help="optimizer steps (default 15000)")
    p.add_argument("--batch-size", type=int, default=None, help="batch size (default 32)")
    p.add_argument("--patch-size", type=int, default=None, help="low-resolution patch side (default 64)")
    p.add_argument("--lr-floor", type=float, default=None, help="learning-rate floor (default 1e-5)")
    p.add_argument("--lr-peak", type=float, default=None, help="learning-rate peak (default 1e-2)")
    p.add_argument("--warmup-fraction", type=float, default=None, help="share of steps spent warming up (default 0.05)")
    p.add_argument("--val", type=Path, default=None, help="directory of validation images")
    p.add_argument("--val-every", type=int, default=None, help="validate every N steps (default 0, off)")
    p.add_argument("--checkpoint-every", type=int, default=None, help="save every N steps (default 0, final only)")
    _common(p)

    p = sub.add_parser("infer-sr", help="upscale every image in a directory with a checkpoint")
    p.add_argument("input", type=Path, help="directory of low-resolution images")
    p.add_argument("--checkpoint", type=Path, default=None, help="RLFN checkpoint file (required)")
    _common(p)

    p = sub.add_parser("eval-sr", help="PSNR/MSE of restored images against references")
    p.add_argument("restored", type=Path, help="directory of restored images")
    p.add_argument("reference", type=Path, help="directory of reference images with matching names")
    p.add_argument("--train-dataset", default=None, help="label for the train_dataset column (default -)")
    p.add_argument("--sr", default=None, help="label for the sr column (default RLFN)")
    _common(p)

    p = sub.add_parser("detect", help="run a detector over a dataset and write a detections file")
    p.add_argument("manifest", type=Path, help="dataset manifest (TOML)")
    p.add_argument("--backend", default=None, help="oracle, random, null or external (default oracle)")
    p.add_argument("--params", default=None, help="backend parameters as a JSON object")
    p.add_argument("--score-threshold", type=float, default=None, help="drop detections below this score (default 0.05)")
    p.add_argument("--max-detections", type=int, default=None, help="keep at most N detections per frame (default 100)")
    _common(p, workers=True)

    p = sub.add_parser("eval-det", help="score a detections file against a dataset's ground truth")
    p.add_argument("detections", type=Path, help="detections file (JSON lines)")
    p.add_argument("manifest", type=Path, help="dataset manifest providing the ground truth")
    _common(p)

    p = sub.add_parser("run", help="run a full experiment from a config file")
    p.add_argument("experiment", type=Path, nargs="?", help="experiment config (TOML); same as --config")
    _common(p, workers=True)

    p = sub.add_parser("compare", help="metric deltas of reports against a baseline")
    p.add_argument("reports", type=Path, nargs="+", help="report.json files or run directories")
    p.add_argument("--baseline", type=int, default=None, help="index of the baseline report (default 0)")
    p.add_argument("--labels", default=None, help="comma-separated run labels")
    _common(p)

    p = sub.add_parser("validate", help="check a dataset manifest and list every problem")
    p.add_argument("manifest", type=Path, help="dataset manifest (TOML)")
    _common(p)
    return parser


# Values used when neither the command line nor --config sets an option.
DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "kernel": "bicubic",
    "scale": 2,
    "init": "interp",
    "train_dataset": "-",
    "sr": "RLFN",
    "backend": "oracle",
    "score_threshold": 0.05,
    "max_detections": 100,
    "baseline": 0,
}


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    if args.config is not None and args.command != "run":
        try:
            with open(args.config, "rb") as fh:
                doc = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise InvalidConfig(f"cannot read config {args.config}: {exc}") from exc
        table = doc.get(args.command, doc)
        for key, value in table.items():
            key = key.replace("-", "_")
            if not hasattr(args, key):
                raise InvalidConfig(f"unknown option {key!r} for {args.command} in {args.config}")
            if getattr(args, key) in (None, False):
                setattr(args, key, value)
    for key, value in DEFAULTS.items():
        if getattr(args, key, False) is None:
            setattr(args, key, value)
    return args


def _emit(args, rows: list[dict], columns, payload=None):
    """Print ``rows`` as CSV, or ``payload`` (default ``rows``) as JSON with ``--json``."""
    if args.json:
        print(json.dumps(rows if payload is None else payload, indent=2, sort_keys=True))
        return
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    sys.stdout.write(buf.getvalue())


def _fmt(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.4f}"
    return v


def _require(value, flag):
    if value is None:
        raise InvalidConfig(f"{flag} is required")
    return value


# -- subcommands ------------------------------------------------------------


def cmd_degrade(args) -> int:
    from .imaging import downscale, ensure_dir, list_frames, load_image, modcrop, save_image

    factor = _require(args.factor, "--factor")
    out = ensure_dir(_require(args.out, "--out"))
    for path in list_frames(args.input):
        img = load_image(path)
        if not args.no_modcrop:
            img = modcrop(img, factor)
        save_image(downscale(img, factor, args.kernel), out / f"{path.stem}.png")
        log.info("degraded %s", path.name)
    return 0


def cmd_train_sr(args) -> int:
    from .imaging import read_frames
    from .rlfn import SRModelConfig, TrainConfig, build_model, train
    from .synth import textures

    model_cfg = SRModelConfig(
        scale=args.scale,
        feature_channels=args.channels or 52,
        num_blocks=args.blocks or 4,
        tiny_preset=bool(args.tiny),
    )
    overrides = {
        "total_steps": args.steps,
        "batch_size": args.batch_size,
        "patch_size": args.patch_size,
        "lr_floor": args.lr_floor,
        "lr_peak": args.lr_peak,
        "warmup_fraction": args.warmup_fraction,
        "val_every": args.val_every,
        "checkpoint_every": args.checkpoint_every,
    }
    out = Path(_require(args.out, "--out"))
    train_cfg = TrainConfig(
        seed=args.seed, checkpoint_dir=str(out), **{k: v for k, v in overrides.items() if v is not None}
    )
    if args.synthetic:
        side = train_cfg.patch_size * model_cfg.scale * 2
        images = textures(args.synthetic, side, side, seed=args.seed)
    elif args.images is not None:
        images = list(read_frames(args.images).values())
    else:
        raise InvalidConfig("give a training image directory or --synthetic N")
    val = list(read_frames(args.val).values()) if args.val else None
    model = build_model(model_cfg, seed=args.seed, init=args.init)
    _, history = train(model, images, train_cfg, val_images=val)
    (out / "history.json").write_text(json.dumps(history.to_dict()) + "\n", encoding="utf-8")
    final = out / f"rlfn_x{model_cfg.scale}_final.srdb"
    summary = {"checkpoint": str(final), "steps": train_cfg.total_steps, "final_loss": history.losses[-1]}
    if history.validation:
        summary["val_psnr"] = history.validation[-1][1]
    _emit(args, [{k: _fmt(v) for k, v in summary.items()}], summary.keys(), summary)
    return 0


def cmd_infer_sr(args) -> int:
    from .imaging import ensure_dir, list_frames, load_image, save_image
    from .rlfn import load_checkpoint, sr_forward

    model = load_checkpoint(_require(args.checkpoint, "--checkpoint"))
    out = ensure_dir(_require(args.out, "--out"))
    for path in list_frames(args.input):
        save_image(sr_forward(model, load_image(path)), out / f"{path.stem}.png")
        log.info("restored %s", path.name)
    return 0


EVAL_SR_COLUMNS = ("train_dataset", "sr", "psnr", "mse")


def cmd_eval_sr(args) -> int:
    from .errors import MissingFile
    from .imaging import list_frames, load_image, quality_report

    refs = {p.stem: p for p in list_frames(args.reference)}
    pairs, ids = [], []
    for path in list_frames(args.restored):
        if path.stem not in refs:
            raise MissingFile(f"no reference image for {path.name} in {args.reference}")
        pairs.append((load_image(path), load_image(refs[path.stem])))
        ids.append(path.stem)
    report = quality_report(pairs, ids)
    row = {"train_dataset": args.train_dataset, "sr": args.sr, "psnr": report.psnr_db, "mse": report.mse}
    if args.out is not None:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    payload = {**row, "psnr": report.to_dict()["psnr_db"], "quality": report.to_dict()}
    _emit(args, [{k: _fmt(v) for k, v in row.items()}], EVAL_SR_COLUMNS, payload)
    return 0


def cmd_detect(args) -> int:
    from .dataio import load_ground_truth, load_manifest
    from .detect import BackendKind, DetectorBackend, detect, write_detections
    from .imaging import load_image

    try:
        params = json.loads(args.params) if isinstance(args.params, str) else dict(args.params or {})
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"--params is not valid JSON: {exc}") from exc
    kind = BackendKind.parse(args.backend)
    if kind in (BackendKind.ORACLE, BackendKind.RANDOM):
        params["seed"] = args.seed
    backend = DetectorBackend(kind, params, args.score_threshold, args.max_detections)
    manifest = load_manifest(args.manifest)
    out = Path(_require(args.out, "--out"))

    def work(item):
        entry, frame_id, gts = item
        return entry.seq_id, frame_id, detect(backend, load_image(entry.frame_path(frame_id)), gts, (entry.seq_id, frame_id))

    items = []
    for entry in manifest.sequences:
        gt = load_ground_truth(entry) if kind is BackendKind.ORACLE else {}
        items += [(entry, f, gt.get(f, [])) for f in range(1, entry.frame_count + 1)]
    if args.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(args.workers) as pool:
            records = list(pool.map(work, items))
    else:
        records = [work(i) for i in items]
    write_detections(out, records, meta={"backend": backend.describe(), "manifest": str(args.manifest)})
    n = sum(len(r[2]) for r in records)
    summary = {"frames": len(records), "detections": n, "output": str(out)}
    _emit(args, [summary], summary.keys(), summary)
    return 0


def _eval_row(result) -> dict:
    return {k: _fmt(v) if v is not None else "n/a" for k, v in result.columns().items()}


def cmd_eval_det(args) -> int:
    from .dataio import load_ground_truth, load_manifest
    from .detect import read_detections
    from .evalmetrics import evaluate

    _, dets = read_detections(args.detections)
    manifest = load_manifest(args.manifest)
    gts = {}
    for entry in manifest.sequences:
        for frame_id, boxes in load_ground_truth(entry).items():
            gts[(entry.seq_id, frame_id)] = boxes
    result = evaluate(dets, gts)
    if args.out is not None:
        Path(args.out).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    row = _eval_row(result)
    _emit(args, [row], row.keys(), result.to_dict())
    return 0


def cmd_run(args) -> int:
    from .pipeline import load_config, run_experiment, table_text, write_report

    path = args.experiment or args.config
    if path is None:
        raise InvalidConfig("run needs an experiment config")
    cfg = load_config(path, seed=args.seed, output_dir=str(args.out) if args.out else None, workers=args.workers)
    report = run_experiment(cfg)
    if cfg.output_dir:
        json_path, csv_path = write_report(report, cfg.output_dir)
        log.info("wrote %s and %s", json_path, csv_path)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        sys.stdout.write(table_text([report]))
    return 0


def cmd_compare(args) -> int:
    from .pipeline import compare_runs, format_delta_table, read_report

    reports = [read_report(p) for p in args.reports]
    labels = args.labels.split(",") if args.labels else [Path(p).stem if Path(p).suffix else Path(p).name for p in args.reports]
    if len(labels) != len(reports):
        raise InvalidConfig(f"{len(labels)} labels for {len(reports)} reports")
    if not 0 <= args.baseline < len(reports):
        raise InvalidConfig(f"--baseline {args.baseline} out of range")
    rows = compare_runs(reports, baseline=args.baseline, labels=labels)
    if args.json:
        print(json.dumps([r.to_dict() for r in rows], indent=2, sort_keys=True))
    else:
        sys.stdout.write(format_delta_table(rows))
    return 0


def cmd_validate(args) -> int:
    from .dataio import load_manifest, validate_manifest

    manifest = load_manifest(args.manifest)
    report = validate_manifest(manifest)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    elif report.ok:
        print(f"{args.manifest}: ok ({len(manifest.sequences)} sequences)")
    else:
        for v in report.violations:
            print(v)
    return 0 if report.ok else 3


COMMANDS = {
    "degrade": cmd_degrade,
    "train-sr": cmd_train_sr,
    "infer-sr": cmd_infer_sr,
    "eval-sr": cmd_eval_sr,
    "detect": cmd_detect,
    "eval-det": cmd_eval_det,
    "run": cmd_run,
    "compare": cmd_compare,
    "validate": cmd_validate,
}


def _origin(exc: BaseException) -> str:
    """Name of the innermost package module the exception passed through."""
    name = "cli"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith(__package__ + "."):
            name = mod[len(__package__) + 1 :]
        tb = tb.tb_next
    return name


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 2
        _apply_config(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except BenchError as exc:
        module = _origin(exc)
        print(f"error: {args.command}: {type(exc).__name__} ({module}): {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        print(f"error: {args.command}: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
