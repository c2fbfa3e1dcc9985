"""Command-line front end: gen-gt, simulate, eval, bench.

Every run writes its outputs plus a ``manifest.json`` into ``--out``.  The
manifest digest covers output bytes only, so identical inputs and flags
give identical digests regardless of wall-clock time or ``--jobs``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from . import __version__
from .core import InvariantError, MiDAnnotation, Method, OttcError, PredictionRecord, TrackedSequence
from .evaluation import (
    BaselineKind,
    ConfigError,
    EvalConfig,
    EvalError,
    MatchKind,
    MetricsReport,
    MissingPolicy,
    baseline_predict,
    evaluate,
    format_table,
    predictions_from_map,
    write_report,
)
from .ingest import (
    ParseError,
    MissingCalibration,
    parse_annotations,
    parse_dense_map,
    parse_kitti_tracking,
    parse_predictions,
    parse_scene,
    write_annotations,
    write_scene,
)
from .sim import DegenerateSpec, make_validation_suite, parse_specs, simulate, write_specs
from .ttc import GT_METHODS, annotate_sequence

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_CONFIG, EXIT_INTERNAL = 0, 2, 3, 4, 5

FAMILIES = ("plate", "constant-yaw", "rotating", "lateral", "near-singular")


class UsageError(OttcError):
    code = "UsageError"


# -- shared helpers ---------------------------------------------------------


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_outputs(out: Path, files: Dict[str, str], command: str, inputs: Sequence[str], config: dict) -> str:
    """Write ``files`` under ``out`` plus a manifest; returns the output digest."""
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name in sorted(files):
        data = files[name].encode("utf-8")
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        hashes[name] = _digest(data)
    digest = _digest("".join(f"{n}\t{h}\n" for n, h in sorted(hashes.items())).encode())
    manifest = {
        "command": command,
        "inputs": list(inputs),
        "config": config,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": hashes,
        "output_digest": digest,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return digest


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def _pool_map(fn: Callable, items: Sequence, jobs: int) -> List:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def load_kitti_dir(root: str, kfps: Optional[float]) -> List[TrackedSequence]:
    """Sequences of a KITTI tracking split: ``label_02/*.txt`` with ``calib/*.txt``."""
    if kfps is None:
        raise UsageError("--kfps is required for KITTI input")
    base = Path(root)
    labels = sorted((base / "label_02").glob("*.txt"))
    if not labels:
        raise ConfigError(f"no label_02/*.txt files under {root}")
    seqs = []
    for label in labels:
        calib = base / "calib" / label.name
        if not calib.is_file():
            raise MissingCalibration(f"no calibration file {calib}")
        seq, diag = parse_kitti_tracking(label.read_text(), calib.read_text(), kfps, sequence_id=label.stem)
        for line, msg in diag.warnings:
            print(f"{label.name}:{line}: skipped: {msg}", file=sys.stderr)
        seqs.append(seq)
    return seqs


def load_sequences(args) -> List[TrackedSequence]:
    if args.kitti:
        return load_kitti_dir(args.kitti, args.kfps)
    seqs = [parse_scene(_read_text(p)) for p in args.scene]
    if args.kfps is not None:
        seqs = [TrackedSequence(s.sequence_id, s.intrinsics, args.kfps, s.frames) for s in seqs]
    return seqs


def _parse_band(text: str) -> Tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo,hi got {text!r}") from None
    return lo, hi


def _parse_match(text: str) -> Tuple[MatchKind, Optional[float]]:
    kind, _, param = text.partition(":")
    try:
        return MatchKind(kind), (float(param) if param else None)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected track, center:R or iou:T, got {text!r}") from None


def eval_config(args) -> EvalConfig:
    kind, param = args.match_mode
    return EvalConfig(
        categories=tuple(c for c in args.categories.split(",") if c),
        risk_lower=args.risk_band[0],
        risk_upper=args.risk_band[1],
        match_kind=kind,
        match_param=param,
        missing_policy=MissingPolicy(args.missing_policy),
    )


def config_record(cfg: EvalConfig) -> dict:
    return {
        "categories": list(cfg.categories),
        "risk_band": [cfg.risk_lower, cfg.risk_upper],
        "match_mode": cfg.match_kind.value,
        "match_param": cfg.match_param,
        "missing_policy": cfg.missing_policy.value,
    }


# -- gen-gt -----------------------------------------------------------------


def _annotate_job(item: Tuple[TrackedSequence, Method]):
    run = annotate_sequence(*item)
    return run.annotations, run.skipped


def cmd_gen_gt(args) -> int:
    method = Method(args.method)
    seqs = load_sequences(args)
    results = _pool_map(_annotate_job, [(s, method) for s in seqs], args.jobs)
    annotations = [a for anns, _ in results for a in anns]
    skipped = [s for _, skips in results for s in skips]
    inputs = [args.kitti] if args.kitti else list(args.scene)
    digest = write_outputs(
        Path(args.out),
        {"annotations.txt": write_annotations(annotations)},
        "gen-gt",
        inputs,
        {"method": method.value, "kfps": args.kfps},
    )
    print(f"sequences: {len(seqs)}  annotations: {len(annotations)}  skipped: {len(skipped)}")
    reasons: Dict[str, int] = {}
    for s in skipped:
        reasons[s.reason] = reasons.get(s.reason, 0) + 1
    for reason in sorted(reasons):
        print(f"  skipped ({reason}): {reasons[reason]}")
    print(f"digest: {digest}")
    return EXIT_OK


# -- simulate ---------------------------------------------------------------


def suite_specs(seed: int, families: Optional[Sequence[str]]):
    specs = make_validation_suite(seed)
    if families:
        specs = [s for s in specs if s.family in families]
    return specs


def cmd_simulate(args) -> int:
    if args.spec:
        specs = parse_specs(_read_text(args.spec))
        inputs = [args.spec]
    else:
        specs = suite_specs(args.suite, args.family)
        inputs = []
    files = {"specs.json": write_specs(specs)}
    annotations = []
    for spec in specs:
        seq, exact = simulate(spec)
        files[f"scenes/{spec.scene_id}.json"] = write_scene(seq)
        annotations += exact
    files["annotations.txt"] = write_annotations(annotations)
    digest = write_outputs(
        Path(args.out), files, "simulate", inputs, {"suite_seed": args.suite, "families": args.family}
    )
    print(f"scenes: {len(specs)}  exact annotations: {len(annotations)}")
    print(f"digest: {digest}")
    return EXIT_OK


# -- eval -------------------------------------------------------------------


def _load_dense_predictions(root: str, annotations: Sequence[MiDAnnotation]) -> List[PredictionRecord]:
    """Predictions sampled from ``<root>/<sequence_id>/<frame_index>.omid`` maps."""
    wanted = sorted({(a.sequence_id, a.frame_index) for a in annotations})
    out = []
    for seq_id, frame in wanted:
        path = Path(root) / seq_id / f"{frame}.omid"
        if not path.is_file():
            continue
        dense = parse_dense_map(path.read_bytes(), frame_index=frame)
        out += predictions_from_map(dense, seq_id, annotations)
    return out


def _gt_boxes(scene_paths: Sequence[str]):
    boxes = {}
    for p in scene_paths or ():
        seq = parse_scene(_read_text(p))
        for obj in seq.instances():
            boxes[(seq.sequence_id, obj.frame_index, obj.track_id)] = obj.bbox
    return boxes


def cmd_eval(args) -> int:
    cfg = eval_config(args)
    annotations = parse_annotations(_read_text(args.annotations))
    if args.dense_maps:
        if cfg.match_kind is not MatchKind.TRACK:
            raise ConfigError("dense maps are sampled at ground-truth centers; use --match-mode track")
        predictions = _load_dense_predictions(args.dense_maps, annotations)
        source = args.dense_maps
    else:
        predictions, diag = parse_predictions(_read_text(args.predictions))
        for line, msg in diag.warnings:
            print(f"{args.predictions}:{line}: skipped: {msg}", file=sys.stderr)
        source = args.predictions
    boxes = _gt_boxes(args.scene) if cfg.match_kind is MatchKind.IOU else None
    report = evaluate(predictions, annotations, cfg, boxes)
    digest = write_outputs(
        Path(args.out),
        {"report.txt": write_report(report)},
        "eval",
        [source, args.annotations, *(args.scene or ())],
        config_record(cfg),
    )
    print(format_table(report))
    print(f"digest: {digest}")
    return EXIT_OK


# -- bench ------------------------------------------------------------------


def _bench_job(item) -> Dict[str, MetricsReport]:
    seq, gt, baselines, file_preds, cfg = item
    reports = {}
    for kind in baselines:
        reports[kind.value] = evaluate(baseline_predict(seq, kind), gt, cfg)
    for name, preds in file_preds.items():
        reports[name] = evaluate(preds, gt, cfg)
    return reports


def _split_methods(text: str) -> List[str]:
    return [m for m in (text or "").split(",") if m]


def rank_table(reports: Dict[str, MetricsReport]) -> str:
    def key(name: str):
        value = reports[name].o_mid
        return (value is None, value if value is not None else 0.0, name)

    lines = [f"{'rank':<5} {'method':<26} {'oMiD':>10} {'oMiD+':>10} {'risk acc':>9} {'matched':>8} {'missing':>8}"]
    for rank, name in enumerate(sorted(reports, key=key), start=1):
        r = reports[name]
        fmt = lambda v, d=2: "-" if v is None else f"{v:.{d}f}"  # noqa: E731
        lines.append(
            f"{rank:<5} {name:<26} {fmt(r.o_mid):>10} {fmt(r.o_mid_plus):>10} "
            f"{fmt(r.risk_accuracy, 3):>9} {r.n_matched:>8} {r.n_missing_pred:>8}"
        )
    return "\n".join(lines) + "\n"


def cmd_bench(args) -> int:
    try:
        baselines = [BaselineKind(b) for b in _split_methods(args.baselines)]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    file_specs = list(args.predictions or ())
    if not baselines and not file_specs:
        raise UsageError("no methods: give --baselines and/or --predictions NAME=FILE")
    cfg = eval_config(args)

    if args.suite is not None:
        seqs, gt = [], []
        for spec in suite_specs(args.suite, args.family):
            seq, exact = simulate(spec)
            seqs.append(seq)
            gt.append(exact if args.gt_method is None else annotate_sequence(seq, Method(args.gt_method)).annotations)
        inputs: List[str] = []
    else:
        seqs = load_sequences(args)
        method = Method(args.gt_method or Method.TRACKS_3D.value)
        gt = [annotate_sequence(s, method).annotations for s in seqs]
        inputs = [args.kitti] if args.kitti else list(args.scene)

    file_preds: Dict[str, Dict[str, List[PredictionRecord]]] = {}
    for item in file_specs:
        name, sep, path = item.partition("=")
        if not sep or not name or name in file_preds or name in {b.value for b in baselines}:
            raise UsageError(f"--predictions expects unique NAME=FILE, got {item!r}")
        records, _ = parse_predictions(_read_text(path))
        grouped: Dict[str, List[PredictionRecord]] = {}
        for r in records:
            grouped.setdefault(r.sequence_id, []).append(r)
        file_preds[name] = grouped
        inputs.append(path)

    items = [
        (s, g, baselines, {n: grouped.get(s.sequence_id, []) for n, grouped in file_preds.items()}, cfg)
        for s, g in zip(seqs, gt)
    ]
    per_seq = _pool_map(_bench_job, items, args.jobs)
    totals: Dict[str, MetricsReport] = {}
    for reports in per_seq:  # fixed sequence order keeps float sums identical for any --jobs
        for name, rep in reports.items():
            totals[name] = totals[name].merge(rep) if name in totals else rep

    files = {f"report-{name}.txt": write_report(rep) for name, rep in totals.items()}
    table = rank_table(totals)
    files["bench.txt"] = table
    digest = write_outputs(
        Path(args.out),
        files,
        "bench",
        inputs,
        {**config_record(cfg), "suite_seed": args.suite, "families": args.family, "gt_method": args.gt_method},
    )
    print(table, end="")
    print(f"digest: {digest}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------


def _add_dataset_args(p: argparse.ArgumentParser, suite: bool = False) -> None:
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--kitti", metavar="DIR", help="KITTI tracking split with label_02/ and calib/")
    group.add_argument("--scene", metavar="FILE", nargs="+", help="scene documents")
    if suite:
        group.add_argument("--suite", "--seed", metavar="SEED", type=int, help="simulated validation suite")
        p.add_argument("--family", action="append", choices=FAMILIES, help="restrict the suite to a family")
    p.add_argument("--kfps", type=float, help="key frames per second (required for KITTI, e.g. 10)")


def _add_eval_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--categories", default="Car,Pedestrian", help="comma-separated labels (default: %(default)s)")
    p.add_argument("--risk-band", type=_parse_band, default=(0.998, 1.002), metavar="LO,HI")
    p.add_argument("--match-mode", type=_parse_match, default=(MatchKind.TRACK, None), metavar="MODE",
                   help="track | center:RADIUS_PX | iou:THRESHOLD")
    p.add_argument("--missing-policy", choices=[m.value for m in MissingPolicy], default=MissingPolicy.SKIP.value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ottc", description="Per-object time-to-contact ground truth and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-gt", help="generate motion-in-depth ground truth from tracks")
    _add_dataset_args(p)
    p.add_argument("--method", required=True, choices=[m.value for m in GT_METHODS])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_gt)

    p = sub.add_parser("simulate", help="render scenes with exact ground truth")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--spec", metavar="FILE", help="scene-spec document")
    group.add_argument("--suite", "--seed", metavar="SEED", type=int, help="generate the validation suite")
    p.add_argument("--family", action="append", choices=FAMILIES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="score predictions against annotations")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--predictions", metavar="FILE")
    group.add_argument("--dense-maps", metavar="DIR", help="<DIR>/<sequence>/<frame>.omid")
    p.add_argument("--annotations", required=True, metavar="FILE")
    p.add_argument("--scene", nargs="+", metavar="FILE", help="ground-truth boxes for iou matching")
    _add_eval_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="rank baselines and prediction files on one dataset")
    _add_dataset_args(p, suite=True)
    p.add_argument("--gt-method", choices=[m.value for m in GT_METHODS],
                   help="ground truth (default: exact for --suite, tracks3d otherwise)")
    p.add_argument("--baselines", default="", help="comma-separated: " + ",".join(b.value for b in BaselineKind))
    p.add_argument("--predictions", action="append", metavar="NAME=FILE")
    _add_eval_args(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, ParseError):
        return EXIT_PARSE
    if isinstance(exc, (ConfigError, EvalError, DegenerateSpec, InvariantError, OttcError)):
        return EXIT_CONFIG
    return EXIT_INTERNAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ottc: error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OttcError as exc:
        print(f"ottc: error: {exc.code}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except Exception as exc:  # last-resort guard so failures stay one line
        print(f"ottc: error: Internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
