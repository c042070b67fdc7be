"""Command line: synth, index, match, pipeline, train, classify.

Exit codes: 0 success, 2 usage error (bad flags, missing input file),
3 data or constraint error (undecodable audio, infeasible layout, corrupt
or incompatible stored file, failed precondition).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .audio_io import (
    DecodeError,
    GroundTruth,
    LayoutError,
    SynthSpec,
    decode_wav,
    encode_wav,
    resample_mono,
    synth_corpus,
)
from .fingerprint import FingerprintIndex, MatchEntry, MatchingList, fingerprint_clip, hash_landmarks, query
from .match_classifier import (
    CvResult,
    autolabel,
    default_grid,
    double_cv,
    fit_filter,
    parse_subset,
    select_model,
    SUBSETS,
)
from .pipeline import (
    PipelineConfig,
    load_config,
    load_corpus,
    run_pipeline,
    seed_override,
)
from .storage import (
    StorageError,
    dump_json,
    load_index,
    load_json,
    load_model,
    save_index,
    save_json,
    save_model,
)
from .timeline import cut_audio


def _require(path: str, what: str) -> str:
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _config_from(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = load_config(_require(args.config, "config file"), cfg)
    cfg.seed = seed_override(cfg.seed)
    return cfg


def _decode_file(path: Path, rate: int):
    clip = decode_wav(path.read_bytes(), clip_id=path.stem)
    if clip.rate != rate:
        clip = resample_mono(clip, rate)
    return clip


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_events=args.events,
        clips_per_event=args.clips,
        event_duration=args.event_duration,
        clip_duration_range=(args.clip_duration[0], args.clip_duration[1]),
        min_overlap=args.min_overlap,
        snr_range_db=(args.snr[0], args.snr[1]),
        seed=seed_override(args.seed),
        repeat_fraction=args.repeat_fraction,
        cross_snippet_seconds=args.cross_snippet,
    )
    clips, truth = synth_corpus(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for clip in clips:
        (out / f"{clip.id}.wav").write_bytes(encode_wav(clip))
    (out / "manifest.json").write_text(truth.to_json() + "\n", encoding="utf-8")
    print(f"wrote {len(clips)} clips + manifest.json to {out}")
    return 0


def cmd_index(args) -> int:
    cfg = _config_from(args)
    fp_cfg = cfg.fp_config()
    index = FingerprintIndex(fp_cfg)
    for name in args.files:
        path = Path(_require(name, "audio file"))
        clip = _decode_file(path, fp_cfg.rate)
        hashed = (
            hash_landmarks(fingerprint_clip(clip, fp_cfg))
            if len(clip.samples) >= fp_cfg.window
            else []
        )
        if not hashed:
            print(f"warning: {clip.id}: no landmarks, skipped", file=sys.stderr)
            continue
        index.add_hashed(clip.id, hashed, clip.duration)
    save_index(index, args.out)
    print(f"indexed {len(index.clip_ids)} clips to {args.out}")
    return 0


def _entry_doc(e: MatchEntry) -> dict:
    return {
        "clip": e.clip_id,
        "offset_frames": e.offset_frames,
        "offset_seconds": e.offset_seconds,
        "ml": e.ml,
        "tml": e.tml,
        "lq": e.lq,
        "li": e.li,
    }


def matches_to_doc(lists: list[MatchingList]) -> dict:
    return {
        "queries": [
            {"query": ml.query_id, "entries": [_entry_doc(e) for e in ml.entries]}
            for ml in lists
        ]
    }


def matches_from_doc(doc: dict) -> list[MatchingList]:
    lists = []
    for q in doc["queries"]:
        entries = [
            MatchEntry(
                query_id=q["query"],
                clip_id=e["clip"],
                offset_frames=int(e["offset_frames"]),
                offset_seconds=float(e["offset_seconds"]),
                ml=int(e["ml"]),
                tml=int(e["tml"]),
                lq=int(e["lq"]),
                li=int(e["li"]),
            )
            for e in q["entries"]
        ]
        lists.append(MatchingList(query_id=q["query"], entries=entries))
    return lists


def cmd_match(args) -> int:
    cfg = _config_from(args)
    fp_cfg = cfg.fp_config()
    index = load_index(_require(args.index, "index file"))
    lists = []
    for name in args.files:
        path = Path(_require(name, "audio file"))
        clip = _decode_file(path, fp_cfg.rate)
        hashed = (
            hash_landmarks(fingerprint_clip(clip, fp_cfg))
            if len(clip.samples) >= fp_cfg.window
            else []
        )
        lists.append(query(index, clip.id, hashed, fp_cfg))
    doc = matches_to_doc(lists)
    if args.out:
        save_json(doc, args.out)
        print(f"wrote matches for {len(lists)} queries to {args.out}")
    else:
        print(dump_json(doc), end="")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config_from(args)
    corpus_dir = args.input or cfg.input
    if not corpus_dir:
        print("error: no corpus directory (--in or config `input`)", file=sys.stderr)
        return 2
    _require(corpus_dir, "corpus directory")

    match_filter = None
    meta = None
    if args.model:
        match_filter, meta_raw = load_model(_require(args.model, "model file"))
        meta = {
            "family": match_filter.family,
            "param": match_filter.param,
            "subset": match_filter.subset.name,
            **meta_raw,
        }

    clips = load_corpus(corpus_dir, cfg.rate)
    result = run_pipeline(clips, cfg, match_filter, meta)

    out = args.out or cfg.output
    if out:
        save_json(result.report, out)
        print(f"wrote report ({len(result.events)} events) to {out}")
    else:
        print(dump_json(result.report), end="")

    if args.emit_cuts:
        cuts_dir = Path(args.emit_cuts)
        cuts_dir.mkdir(parents=True, exist_ok=True)
        n = 0
        for ev in result.events:
            for seg in ev.segments:
                for cut in seg.members:
                    audio = cut_audio(result.clips[cut.clip_id], cut)
                    if len(audio.samples) == 0:
                        continue
                    (cuts_dir / f"{audio.id}.wav").write_bytes(encode_wav(audio))
                    n += 1
        print(f"wrote {n} segment cuts to {cuts_dir}")
    return 0


def _cv_result_doc(r: CvResult) -> dict:
    return {
        "family": r.family,
        "param": r.param,
        "subset": r.subset.name,
        "train_error": r.train_error,
        "val_error": r.val_error,
        "test_accuracy": r.test_accuracy,
        "wrong_fps": r.wrong_fps,
        "degraded": r.degraded,
    }


def cmd_train(args) -> int:
    doc = load_json(_require(args.matches, "matches file"))
    lists = matches_from_doc(doc)
    truth = GroundTruth.from_json(
        Path(_require(args.manifest, "manifest file")).read_text(encoding="utf-8")
    )
    seed = seed_override(args.seed)
    samples = autolabel(lists, truth)

    subsets = SUBSETS if args.subset == "all" else (parse_subset(args.subset),)
    families = ("logreg", "knn") if args.family == "both" else (args.family,)
    results: list[CvResult] = []
    for family in families:
        grid = default_grid(family)
        for subset in subsets:
            results.extend(double_cv(samples, family, grid, subset, seed))

    chosen = select_model(results, require_clean_wrong=not args.no_wrong_constraint)
    flt = fit_filter(samples, chosen.family, chosen.param, chosen.subset, seed)
    save_model(
        flt,
        args.out,
        meta={
            "accuracy": chosen.test_accuracy,
            "val_error": chosen.val_error,
            "wrong_fps": chosen.wrong_fps,
            "degraded": int(chosen.degraded),
        },
    )
    if args.report:
        save_json(
            {
                "results": [_cv_result_doc(r) for r in results],
                "chosen": _cv_result_doc(chosen),
            },
            args.report,
        )
    flag = " (degraded)" if chosen.degraded else ""
    print(
        f"chose {chosen.family} param={chosen.param:g} subset={chosen.subset.name}"
        f" accuracy={chosen.test_accuracy:.4f} wrong_fps={chosen.wrong_fps}{flag}"
        f" -> {args.out}"
    )
    return 0


def cmd_classify(args) -> int:
    flt, _ = load_model(_require(args.model, "model file"))
    lists = matches_from_doc(load_json(_require(args.matches, "matches file")))
    rows = []
    for ml in lists:
        for e in ml.entries:
            rows.append(
                {
                    "query": e.query_id,
                    "clip": e.clip_id,
                    "offset_frames": e.offset_frames,
                    "predicted_class": flt(e),
                }
            )
    doc = {"predictions": rows}
    if args.out:
        save_json(doc, args.out)
        print(f"wrote {len(rows)} predictions to {args.out}")
    else:
        print(dump_json(doc), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ugcaudio",
        description="Organize user-recorded audio clips into events by shared sound.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--events", type=int, default=2)
    p.add_argument("--clips", type=int, default=3, help="clips per event")
    p.add_argument("--event-duration", type=float, default=120.0)
    p.add_argument("--clip-duration", type=float, nargs=2, default=(20.0, 40.0), metavar=("LO", "HI"))
    p.add_argument("--min-overlap", type=float, default=10.0)
    p.add_argument("--snr", type=float, nargs=2, default=(20.0, 30.0), metavar=("LO", "HI"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat-fraction", type=float, default=0.0)
    p.add_argument("--cross-snippet", type=float, default=0.0, help="seconds of audio shared across event pairs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("index", help="fingerprint WAV files into a binary index")
    p.add_argument("files", nargs="*")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("match", help="match query WAVs against an index")
    p.add_argument("files", nargs="+")
    p.add_argument("--index", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("pipeline", help="full run: cluster, align, segment, report")
    p.add_argument("--in", dest="input")
    p.add_argument("--config")
    p.add_argument("--model", help="trained match classifier to filter edges")
    p.add_argument("--out")
    p.add_argument("--emit-cuts", metavar="DIR", help="write per-segment WAV cuts here")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("train", help="double cross-validation over a model grid")
    p.add_argument("--matches", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--family", choices=("logreg", "knn", "both"), default="logreg")
    p.add_argument("--subset", choices=("S1", "S2", "S3", "S4", "all"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-wrong-constraint", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="also write every grid cell's CV numbers here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="apply a trained model to a matches file")
    p.add_argument("--model", required=True)
    p.add_argument("--matches", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DecodeError, LayoutError, StorageError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
