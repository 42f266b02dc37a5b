"""Command-line interface: ``msdtw <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .bench import CSV_SCHEMA_VERSION, records_as_json, run_bench, write_csv
from .detection import (
    DEFAULT_COLLAR,
    DEFAULT_OFFSET_RATIO,
    calibrate_thresholds,
    read_detections,
    read_events,
    score_events,
    write_events,
)
from .barycenter import FREE_AXES
from .dtw import CLASSIC_STEPS, DEFAULT_STEPS, StepSet
from .features import cepstral_features, load_wav, read_feature_file, write_feature_file
from .multisample import MODES
from .pipeline import apply_thresholds, match_target, prepare_classes, template_lengths
from .storage import (
    read_query_dir,
    load_prepared,
    load_prepared_samples,
    save_prepared,
    write_query_dir,
)
from .synth import SynthConfig, make_corpus

log = logging.getLogger("msdtw")


@dataclass
class RunConfig:
    command: str
    mode: str | None = None
    parallel: bool = False
    workers: int | None = None
    thresholds: dict[str, float] | float | None = None
    collar: float = DEFAULT_COLLAR
    offset_ratio: float = DEFAULT_OFFSET_RATIO
    steps: str = str(DEFAULT_STEPS)
    features: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode is not None and self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        vals = self.thresholds.values() if isinstance(self.thresholds, dict) else [self.thresholds]
        for t in vals:
            if t is not None and not 0.0 <= t <= 1.0:
                raise ValueError(f"threshold {t} outside [0, 1]")


def _steps(text: str) -> StepSet:
    try:
        return StepSet.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{v} outside [0, 1]")
    return v


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _dump(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _feature_settings(args) -> dict:
    return {
        "window_s": args.window,
        "hop_s": args.hop,
        "n_filters": args.n_filters,
        "n_ceps": args.n_ceps,
        "erb_scaled": not args.no_erb,
        "preemphasis": args.preemphasis,
        "lifter": args.lifter,
        "deltas": args.deltas,
    }


def _extract(path: Path, settings: dict):
    return cepstral_features(load_wav(path), **settings)


def _thresholds(args, labels) -> dict[str, float]:
    if args.thresholds:
        data = json.loads(Path(args.thresholds).read_text(encoding="utf-8"))
        table = data.get("thresholds", data)
        missing = [lab for lab in labels if lab not in table]
        if missing:
            raise ValueError(f"{args.thresholds}: no threshold for classes {missing}")
        return {lab: _unit(str(table[lab])) for lab in labels}
    return {lab: args.threshold for lab in labels}


def _check_dims(classes, target, path):
    for label, cls in classes.items():
        if cls.dim != target.dim:
            raise ValueError(f"{path}: target has D={target.dim} but class {label!r} has D={cls.dim}")


# -- commands -----------------------------------------------------------------


def cmd_extract(args) -> int:
    settings = _feature_settings(args)
    seq = _extract(Path(args.wav), settings)
    write_feature_file(seq, args.out)
    log.info("%s: %d frames x %d dims at %g fps", args.out, len(seq), seq.dim, seq.frame_rate)
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_classes=args.classes, shots=args.shots, target_minutes=args.minutes, occurrences=args.occurrences
    )
    corpus = make_corpus(args.seed, cfg)
    out = Path(args.out)
    write_query_dir(
        out / "queries",
        {lab: [(f"{lab}_s{k}", s) for k, s in enumerate(seqs)] for lab, seqs in corpus.queries.items()},
    )
    tdir = out / "targets"
    tdir.mkdir(parents=True, exist_ok=True)
    for split, target in corpus.targets.items():
        write_feature_file(target, tdir / f"{split}.msdt")
        write_events(tdir / f"{split}.tsv", corpus.references[split])
    _dump(out / "synth.json", {"seed": args.seed, "config": asdict(cfg)})
    log.info("wrote %d classes x %d shots and targets %s to %s", cfg.n_classes, cfg.shots, sorted(corpus.targets), out)
    return 0


def cmd_prepare(args) -> int:
    features = None
    if args.extract:
        features = _feature_settings(args)
        samples = read_query_dir(args.queries, ".wav", lambda p: _extract(p, features))
    else:
        samples = read_query_dir(args.queries)
    if args.shots:
        samples = {lab: items[: args.shots] for lab, items in samples.items()}
    dims = {items[0][1].dim for items in samples.values()}
    if len(dims) > 1:
        raise ValueError(f"classes in {args.queries} have differing feature dimensions {sorted(dims)}")
    queries = {lab: [s for _, s in items] for lab, items in samples.items()}
    ids = {lab: [n for n, _ in items] for lab, items in samples.items()}
    classes = prepare_classes(queries, args.steps, args.dba_steps, args.band_radius, ids, args.free_axis)
    settings = {"steps": str(args.steps), "dba_steps": str(args.dba_steps), "band_radius": args.band_radius,
                "free_axis": args.free_axis}
    if features is not None:
        settings["features"] = features
    save_prepared(classes, args.out, settings)
    for label, cls in classes.items():
        log.info("class %s: L=%d K=%d D=%d", label, cls.template_length, len(cls.samples), cls.dim)
    return 0


def cmd_detect(args) -> int:
    classes = load_prepared(args.prepared)
    target = read_feature_file(args.target)
    _check_dims(classes, target, args.target)
    th = _thresholds(args, sorted(classes))
    cfg = RunConfig("detect", args.mode, args.parallel, args.workers, th, steps=str(args.steps),
                    paths={"prepared": args.prepared, "target": args.target, "out": args.out})
    res = match_target(classes, target, args.mode, args.parallel, args.workers, args.steps, args.class_workers,
                       min_score=min(th.values()))
    lengths = template_lengths(classes)
    dets = apply_thresholds(res.candidates, th, lengths, target.frame_rate)
    write_events(args.out, dets)
    log.info("%d subsequence-DTW runs; %d detections written to %s", res.dtw_runs, len(dets), args.out)
    if args.report:
        _dump(args.report, {"config": asdict(cfg), "dtw_runs": res.dtw_runs, "detections": len(dets),
                            "timings": asdict(res.timings)})
    return 0


def cmd_calibrate(args) -> int:
    classes = load_prepared(args.prepared)
    target = read_feature_file(args.target)
    _check_dims(classes, target, args.target)
    refs = read_events(args.labels)
    res = match_target(classes, target, args.mode, args.parallel, args.workers, args.steps, args.class_workers)
    th = calibrate_thresholds(res.candidates, refs, template_lengths(classes), target.frame_rate,
                              onset_collar_s=args.collar, offset_param=args.offset_ratio)
    dets = apply_thresholds(res.candidates, th, template_lengths(classes), target.frame_rate)
    rep = score_events(refs, dets, args.collar, args.offset_ratio)
    _dump(args.out, {"mode": args.mode, "collar": args.collar, "offset_ratio": args.offset_ratio,
                     "validation_f_score": rep.f_score, "thresholds": th})
    log.info("calibrated %d thresholds, validation F=%.4f", len(th), rep.f_score)
    return 0


def cmd_evaluate(args) -> int:
    refs = read_events(args.refs)
    dets = read_detections(args.dets)
    rep = score_events(refs, dets, args.collar, args.offset_ratio)
    print(f"tp={rep.tp} fp={rep.fp} fn={rep.fn} precision={rep.precision:.4f} recall={rep.recall:.4f} f_score={rep.f_score:.4f}")
    for label, c in rep.per_class.items():
        print(f"  {label}\ttp={c['tp']}\tfp={c['fp']}\tfn={c['fn']}")
    if args.report:
        out = rep.as_dict()
        out["collar"], out["offset_ratio"] = args.collar, args.offset_ratio
        out["assumptions"] = "onset collar and offset ratio are evaluation defaults, not taken from a published setup"
        _dump(args.report, out)
    return 0


def _split(tdir: Path, name: str):
    feat, lab = tdir / f"{name}.msdt", tdir / f"{name}.tsv"
    if not feat.exists() or not lab.exists():
        return None
    return read_feature_file(feat), read_events(lab)


def cmd_bench(args) -> int:
    samples = load_prepared_samples(args.prepared)
    tdir = Path(args.targets)
    test = _split(tdir, args.split)
    if test is None:
        raise FileNotFoundError(f"{tdir}: need {args.split}.msdt and {args.split}.tsv")
    validation = None if args.validation == "none" else _split(tdir, args.validation)
    thresholds = None
    if validation is None:
        thresholds = _thresholds(args, sorted(samples))
    records = run_bench(samples, test, args.modes, args.shots, args.reps, validation, thresholds,
                        args.parallel, args.workers, args.steps, args.dba_steps, args.band_radius,
                        args.collar, args.offset_ratio, free_axis=args.free_axis)
    write_csv(records, args.out)
    report = args.report or str(Path(args.out).with_suffix(".json"))
    cfg = RunConfig("bench", None, args.parallel, args.workers, thresholds, args.collar, args.offset_ratio,
                    str(args.steps), paths={"prepared": args.prepared, "targets": args.targets, "out": args.out})
    _dump(report, {
        "csv_schema": CSV_SCHEMA_VERSION,
        "version": __version__,
        "config": asdict(cfg),
        "modes": args.modes,
        "shots": args.shots,
        "reps": args.reps,
        "warmup": 1,
        "templates": {"dba_steps": str(args.dba_steps), "band_radius": args.band_radius, "free_axis": args.free_axis},
        "calibrated_on": None if validation is None else args.validation,
        "host": {"cpus": os.cpu_count(), "machine": platform.machine(), "python": platform.python_version()},
        "records": records_as_json(records),
    })
    log.info("wrote %d records to %s and %s", len(records), args.out, report)
    return 0


# -- parser -------------------------------------------------------------------


def _add_matching(p, mode_required=True):
    if mode_required:
        p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--parallel", action="store_true", help="parallel min-reduction of the cost tensor")
    p.add_argument("--workers", type=int, default=None, help="worker threads for the reduction")
    p.add_argument("--steps", type=_steps, default=DEFAULT_STEPS, help='step set, default "1,1;1,2;2,1"')


def _add_thresholds(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--threshold", type=_unit, default=0.5, help="one threshold for every class")
    g.add_argument("--thresholds", help="JSON file mapping class to threshold")


def _add_collar(p):
    p.add_argument("--collar", type=float, default=DEFAULT_COLLAR, help="onset collar in seconds")
    p.add_argument("--offset-ratio", type=float, default=DEFAULT_OFFSET_RATIO,
                   help="offset tolerance as a fraction of the reference duration")


def _add_features(p):
    p.add_argument("--window", type=float, default=0.025)
    p.add_argument("--hop", type=float, default=0.010)
    p.add_argument("--n-filters", type=int, default=32)
    p.add_argument("--n-ceps", type=int, default=13)
    p.add_argument("--no-erb", action="store_true", help="plain mel filter bandwidths")
    p.add_argument("--preemphasis", type=float, default=0.0)
    p.add_argument("--lifter", type=int, default=0)
    p.add_argument("--deltas", action="store_true")


def _add_templates(p):
    p.add_argument("--steps", type=_steps, default=DEFAULT_STEPS, help='step set, default "1,1;1,2;2,1"')
    p.add_argument("--dba-steps", type=_steps, default=CLASSIC_STEPS, help='standard DBA steps, default "1,1;1,0;0,1"')
    p.add_argument("--band-radius", type=int, default=1, help="Sakoe-Chiba radius of the standard DBA pass")
    p.add_argument("--free-axis", choices=FREE_AXES, default="sample",
                   help="axis with free boundaries in the altered-mean and conversion alignments")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="msdtw", description="Multi-sample subsequence DTW keyword detection.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-q", "--quiet", action="store_true", help="only print warnings and errors")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="WAV to feature file")
    p.add_argument("wav")
    p.add_argument("out")
    _add_features(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=15)
    p.add_argument("--shots", type=int, default=5)
    p.add_argument("--minutes", type=float, default=10.0)
    p.add_argument("--occurrences", type=int, default=12)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="compute class templates")
    p.add_argument("queries", help="directory with one subdirectory per class")
    p.add_argument("out")
    p.add_argument("--extract", action="store_true", help="read WAV samples and extract features")
    p.add_argument("--shots", type=int, default=None, help="use the first K samples by filename")
    _add_templates(p)
    _add_features(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("detect", help="detect keywords in a target")
    p.add_argument("prepared")
    p.add_argument("target")
    p.add_argument("out", help="detections TSV")
    _add_matching(p)
    _add_thresholds(p)
    p.add_argument("--class-workers", type=int, default=1, help="classes matched concurrently")
    p.add_argument("--report", help="JSON run report")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("calibrate", help="per-class thresholds from a labelled target")
    p.add_argument("prepared")
    p.add_argument("target")
    p.add_argument("labels")
    p.add_argument("out", help="thresholds JSON")
    _add_matching(p)
    _add_collar(p)
    p.add_argument("--class-workers", type=int, default=1)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="score detections against references")
    p.add_argument("refs")
    p.add_argument("dets")
    _add_collar(p)
    p.add_argument("--report", help="JSON report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="timings and F-score per mode and shots")
    p.add_argument("prepared")
    p.add_argument("targets", help="directory with <split>.msdt and <split>.tsv")
    p.add_argument("out", help="CSV output")
    p.add_argument("--modes", type=lambda s: [m for m in s.split(",") if m], default=list(MODES))
    p.add_argument("--shots", type=_int_list, default=[1, 2, 3, 4, 5])
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--split", default="test")
    p.add_argument("--validation", default="validation", help='calibration split, or "none"')
    p.add_argument("--report", help="JSON run report (default: CSV path with .json)")
    _add_matching(p, mode_required=False)
    p.add_argument("--dba-steps", type=_steps, default=CLASSIC_STEPS)
    p.add_argument("--band-radius", type=int, default=1)
    p.add_argument("--free-axis", choices=FREE_AXES, default="sample")
    _add_thresholds(p)
    _add_collar(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", force=True)
    if getattr(args, "modes", None):
        bad = [m for m in args.modes if m not in MODES]
        if bad:
            build_parser().error(f"unknown modes {bad}; choose from {', '.join(MODES)}")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"msdtw {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
