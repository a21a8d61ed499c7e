# cli/app.py
# Thiqa - Command line: one executable, one subcommand per pipeline step
#
#   gen -> hwcn -> train -> score -> decode -> calibrate -> eval -> combine
#   experiment runs all of it on a fresh synthetic corpus

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from confidence.calibration import (
    calibrate_hwcn,
    calibrate_result,
    fit,
    load_calibrator,
    save_calibrator,
    sweep_smoothing_scale,
)
from confidence.model import MODEL_KINDS, ConfidenceModel, load_model, save_model
from confidence.training import TrainConfig, select_model, train
from evaluation.combine import COMBINATION_MODES, run_combination_experiment, tally_table
from evaluation.metrics import (
    collect_arc_scores,
    decoded_word_scores,
    det_curve,
    detection_table,
    expected_calibration_error,
    render_table,
    scores_frame,
    wer,
)
from evaluation.stages import DECODE_MODES, build_hwcns, decode_hwcns, score_hwcns, worker_count
from lattice.config import (
    ACOUSTIC_SCALE,
    BATCH_SIZE,
    CALIBRATION_GRID_POINTS,
    CALIBRATION_MODES,
    DEFAULT_SEED,
    DET_POINTS,
    EER_SCOPES,
    EPOCHS,
    FORMAT_VERSIONS,
    HIDDEN_DIM,
    L2,
    LEARNING_RATE,
    LOG_LEVEL,
    MODEL_GRID,
    SMOOTHING_SCALE,
    STATE_DIM,
    TOLERANCE_FRAMES,
    TOOL_NAME,
    TOOL_VERSION,
    setup_logging,
)
from lattice.errors import ContractError, ThiqaError
from lattice.hwcn import label_arcs
from lattice.simgen import SimConfig, default_profiles, generate_corpus, load_sim_config

from cli import io
from cli.manifest import RunManifest, manifest_path_for

logger = logging.getLogger(__name__)

SPLIT_CHOICES = ["all", "train", "dev", "eval"]


def _named_paths(values: Optional[List[str]], flag: str) -> Dict[str, str]:
    """Parse repeated NAME=PATH flags, keeping their order."""
    out: Dict[str, str] = {}
    for value in values or []:
        name, sep, path = value.partition("=")
        if not sep or not name or not path:
            raise ContractError(f"{flag} expects NAME=PATH, got {value!r}")
        if name in out:
            raise ContractError(f"{flag}: {name!r} given twice")
        out[name] = path
    return out


def _load_split_hwcns(directory, split: str):
    hwcns = io.select_split(io.read_hwcns(directory), split)
    if not hwcns:
        raise ContractError(f"no utterances of split {split!r} in {directory}")
    return hwcns


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        io.write_text(out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args, manifest: RunManifest) -> None:
    cfg = load_sim_config(args.config) if args.config else SimConfig(profiles=default_profiles())
    if args.seed is not None:
        cfg.seed = args.seed
    if args.utterances is not None:
        cfg.utterance_count = args.utterances
    manifest.seed = cfg.seed
    corpus = generate_corpus(cfg)
    manifest.outputs.update(io.write_corpus(corpus, args.out))
    print(f"Generated {len(corpus.references)} utterances x {len(corpus.recognizers)} recognizers -> {args.out}")


def cmd_hwcn(args, manifest: RunManifest) -> None:
    lattices = io.read_lattices(args.lattices)
    refs = io.load_references(args.refs) if args.refs else None
    hwcns = build_hwcns(lattices, refs, args.tolerance_frames, args.acoustic_scale, args.workers)
    n = io.write_hwcns(args.out, (hwcns[u] for u in sorted(hwcns)))
    manifest.inputs["lattices"] = str(args.lattices)
    manifest.outputs["hwcns"] = str(args.out)
    print(f"Built {n} HWCNs{' (labeled)' if refs else ''} -> {args.out}")


def _labeled(hwcns, refs_path):
    if refs_path:
        refs = io.load_references(refs_path)
        missing = sorted(u for u in hwcns if u not in refs)
        if missing:
            raise ContractError(f"no reference for {missing[:5]}")
        hwcns = {u: (h if h.is_labeled else label_arcs(h, refs[u])) for u, h in hwcns.items()}
    unlabeled = [u for u, h in hwcns.items() if not h.is_labeled]
    if unlabeled:
        raise ContractError(f"training needs labeled HWCNs (pass --refs); unlabeled: {unlabeled[:5]}")
    return hwcns


def cmd_train(args, manifest: RunManifest) -> None:
    cfg = TrainConfig(
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        l2=args.l2,
        seed=args.seed,
    )
    manifest.seed = args.seed
    hwcns = _labeled(io.read_hwcns(args.hwcns), args.refs)
    train_set = [h for u, h in sorted(io.select_split(hwcns, args.split).items())]
    if not train_set:
        raise ContractError(f"no utterances of split {args.split!r} to train on")

    if args.kind == "select":
        dev_set = [h for u, h in sorted(io.select_split(hwcns, "dev").items())]
        if not dev_set:
            raise ContractError("model selection needs dev-split utterances")
        best, candidates = select_model(train_set, dev_set, MODEL_GRID, cfg)
        model, curve = best.model, best.loss_curve
        table = pd.DataFrame([c.as_row() for c in candidates])
        manifest.outputs["candidates"] = io.write_text(f"{args.out}.candidates.tsv", render_table(table, "tsv"))
        print(render_table(table))
    else:
        model = ConfidenceModel(kind=args.kind, state_dim=args.state_dim, hidden_dim=args.hidden_dim, seed=args.seed)
        if model.trainable:
            model, curve = train(model, train_set, cfg)
        else:
            curve = []

    save_model(model, args.out)
    curve_text = "epoch\tloss\n" + "".join(f"{i}\t{loss:.9f}\n" for i, loss in enumerate(curve))
    manifest.outputs["model"] = str(args.out)
    manifest.outputs["loss_curve"] = io.write_text(f"{args.out}.loss.tsv", curve_text)
    print(f"Trained {model.describe()} on {len(train_set)} utterances -> {args.out}")


def cmd_score(args, manifest: RunManifest) -> None:
    model = ConfidenceModel(kind="posterior_passthrough") if args.model == "passthrough" else load_model(args.model)
    hwcns = _load_split_hwcns(args.hwcns, args.split)
    scored = score_hwcns(model, hwcns, args.workers)
    io.write_hwcns(args.out, (scored[u] for u in sorted(scored)))
    manifest.outputs["hwcns"] = str(args.out)
    if all(h.is_labeled for h in scored.values()):
        frame = scores_frame(scored[u] for u in sorted(scored))
        manifest.outputs["scores"] = io.write_scores(Path(args.out) / "scores.tsv", frame)
    print(f"Scored {len(scored)} HWCNs with {model.describe()} -> {args.out}")


def cmd_decode(args, manifest: RunManifest) -> None:
    hwcns = _load_split_hwcns(args.hwcns, args.split)
    results = decode_hwcns(hwcns, args.mode, args.acoustic_scale, args.workers)
    manifest.outputs["hypotheses"] = io.write_decode_file(args.out, results.values())
    print(f"Decoded {len(results)} utterances ({args.mode}) -> {args.out}")


def _calibration_pairs(args):
    """Every word arc of --hwcns, or the decoded words of --hyps aligned to --refs."""
    if bool(args.hwcns) == bool(args.hyps):
        raise ContractError("give exactly one of --hwcns or --hyps")
    if args.hwcns:
        hwcns = _load_split_hwcns(args.hwcns, args.split)
        return collect_arc_scores(hwcns[u] for u in sorted(hwcns))
    if not args.refs:
        raise ContractError("--hyps needs --refs")
    hyps = io.select_split(io.load_decode_file(args.hyps), args.split)
    if not hyps:
        raise ContractError(f"no utterances of split {args.split!r} in {args.hyps}")
    return decoded_word_scores(hyps, io.load_references(args.refs))


def cmd_calibrate_fit(args, manifest: RunManifest) -> None:
    pairs = _calibration_pairs(args)
    scale = args.smoothing_scale
    if args.sweep_hwcns:
        heldout = _load_split_hwcns(args.sweep_hwcns, "all")
        scale, rows = sweep_smoothing_scale(pairs, collect_arc_scores(heldout[u] for u in sorted(heldout)))
        print(render_table(pd.DataFrame(rows)))
    calibrator = fit(pairs, smoothing_scale=scale, eval_mode=args.eval_mode, grid_points=args.grid_points)
    save_calibrator(calibrator, args.out)
    manifest.outputs["calibrator"] = str(args.out)
    print(f"Calibrator (L={scale:g}) from {calibrator.n_correct} correct / {calibrator.n_wrong} wrong -> {args.out}")


def cmd_calibrate_apply(args, manifest: RunManifest) -> None:
    calibrator = load_calibrator(args.calibrator)
    if bool(args.hwcns) == bool(args.decoded):
        raise ContractError("give exactly one of --hwcns or --decoded")
    if args.hwcns:
        hwcns = io.read_hwcns(args.hwcns)
        io.write_hwcns(args.out, (calibrate_hwcn(calibrator, hwcns[u]) for u in sorted(hwcns)))
        print(f"Calibrated {len(hwcns)} HWCNs -> {args.out}")
    else:
        results = io.load_decode_file(args.decoded)
        io.write_decode_file(args.out, (calibrate_result(calibrator, r) for r in results.values()))
        print(f"Calibrated {len(results)} hypotheses -> {args.out}")
    manifest.outputs["calibrated"] = str(args.out)


def cmd_eval(args, manifest: RunManifest) -> None:
    hyps = io.load_decode_file(args.hyps)
    refs = io.load_references(args.refs)
    unknown = sorted(set(hyps) - set(refs))
    if unknown:
        raise ContractError(f"hypotheses without reference: {unknown[:5]}")
    report = wer({u: r.words for u, r in hyps.items()}, {u: refs[u] for u in hyps})
    frame = pd.DataFrame([{
        "utterances": len(hyps),
        "ref words": report.ref_word_count,
        "sub": report.substitutions,
        "del": report.deletions,
        "ins": report.insertions,
        "WER (%)": round(100.0 * report.wer, 2),
    }])
    text = render_table(frame, args.format)
    if args.scores:
        pairs = io.score_pairs(io.load_scores(args.scores))
        detection = det_curve(pairs, args.det_points)
        table = detection_table({Path(args.scores).stem: detection})
        table["ECE"] = round(expected_calibration_error(pairs), 4)
        text += render_table(table, args.format)
    _emit(text, args.out)
    if args.out:
        manifest.outputs["report"] = str(args.out)


def cmd_combine(args, manifest: RunManifest) -> None:
    systems_paths = _named_paths(args.system, "--system")
    if len(systems_paths) < 2:
        raise ContractError("combine needs at least two --system NAME=DECODE_FILE")
    systems = {name: io.load_decode_file(path) for name, path in systems_paths.items()}
    refs = io.load_references(args.refs)
    ids = set(next(iter(systems.values())))
    refs = {u: refs[u] for u in refs if u in ids}

    modes = COMBINATION_MODES if args.mode == "both" else [args.mode]
    calibrators = None
    if "calibrated" in modes:
        paths = _named_paths(args.calibrator, "--calibrator")
        calibrators = {name: load_calibrator(path) for name, path in paths.items()}
    reports = [run_combination_experiment(systems, refs, mode, calibrators) for mode in modes]

    text = render_table(tally_table(reports), args.format)
    if args.details:
        for report in reports:
            text += render_table(report.records_frame(), args.format)
    _emit(text, args.out)
    manifest.inputs.update(systems_paths)
    if args.out:
        manifest.outputs["report"] = str(args.out)


def cmd_experiment(args, manifest: RunManifest) -> None:
    from evaluation.run_evaluation import ExperimentPipeline

    cfg = load_sim_config(args.config) if args.config else SimConfig(profiles=default_profiles())
    if args.seed is not None:
        cfg.seed = args.seed
    if args.utterances is not None:
        cfg.utterance_count = args.utterances
    manifest.seed = cfg.seed
    grid = MODEL_GRID[:1] if args.quick else MODEL_GRID
    train_cfg = TrainConfig(epochs=5 if args.quick else args.epochs, seed=cfg.seed)
    pipeline = ExperimentPipeline(
        cfg, args.out, train_cfg, grid,
        tolerance_frames=args.tolerance_frames,
        smoothing_scale=args.smoothing_scale,
        eer_scope=args.scope,
        workers=args.workers,
    )
    results = pipeline.run_complete_pipeline()
    manifest.outputs.update(results["files"])


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _version_text() -> str:
    lines = [f"{TOOL_NAME} {TOOL_VERSION}"]
    lines.extend(f"  {kind:<11} {tag}" for kind, tag in FORMAT_VERSIONS.items())
    return "\n".join(lines)


class _VersionAction(argparse.Action):
    def __init__(self, option_strings, dest=argparse.SUPPRESS, default=argparse.SUPPRESS, help=None):
        super().__init__(option_strings=option_strings, dest=dest, default=default, nargs=0, help=help)

    def __call__(self, parser, namespace, values, option_string=None):
        print(_version_text())
        parser.exit()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="Word confidence on heterogeneous word confusion networks",
    )
    parser.add_argument("--version", action=_VersionAction, help="print tool and file format versions")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    def workers(p):
        p.add_argument("--workers", type=int, default=0, help="worker processes (0 = all cores)")

    def split(p, default="all"):
        p.add_argument("--split", choices=SPLIT_CHOICES, default=default,
                       help="restrict to one utterance-id split")

    p = sub.add_parser("gen", help="generate a synthetic multi-recognizer corpus")
    p.add_argument("--config", help="simulation config (key = value); defaults if omitted")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--utterances", type=int, default=None, help="override utterance_count")
    p.set_defaults(func=cmd_gen, manifest_target="out")

    p = sub.add_parser("hwcn", help="build HWCNs from lattices")
    p.add_argument("--lattices", required=True, help="directory of *.lat files")
    p.add_argument("--out", required=True, help="output directory of *.hwcn files")
    p.add_argument("--refs", help="reference TSV; labels the arcs when given")
    p.add_argument("--tolerance-frames", type=int, default=TOLERANCE_FRAMES)
    p.add_argument("--acoustic-scale", type=float, default=ACOUSTIC_SCALE)
    workers(p)
    p.set_defaults(func=cmd_hwcn, manifest_target="out")

    p = sub.add_parser("train", help="train a confidence model on labeled HWCNs")
    p.add_argument("--hwcns", required=True)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--refs", help="reference TSV for unlabeled HWCNs")
    p.add_argument("--kind", choices=MODEL_KINDS + ["select"], default="lattice_rnn",
                   help="'select' trains the model grid and keeps the best dev EER")
    p.add_argument("--state-dim", type=int, default=STATE_DIM)
    p.add_argument("--hidden-dim", type=int, default=HIDDEN_DIM)
    p.add_argument("--learning-rate", type=float, default=LEARNING_RATE)
    p.add_argument("--epochs", type=int, default=EPOCHS)
    p.add_argument("--batch-size", type=int, default=BATCH_SIZE)
    p.add_argument("--l2", type=float, default=L2)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    split(p, default="train")
    p.set_defaults(func=cmd_train, manifest_target="out")

    p = sub.add_parser("score", help="fill arc confidences with a model")
    p.add_argument("--hwcns", required=True)
    p.add_argument("--model", required=True, help="model file, or 'passthrough' for arc posteriors")
    p.add_argument("--out", required=True, help="output directory of scored *.hwcn files")
    split(p)
    workers(p)
    p.set_defaults(func=cmd_score, manifest_target="out")

    p = sub.add_parser("decode", help="1-best hypotheses from HWCNs")
    p.add_argument("--hwcns", required=True)
    p.add_argument("--mode", choices=DECODE_MODES, default="maxmean")
    p.add_argument("--out", required=True, help="hypothesis file")
    p.add_argument("--acoustic-scale", type=float, default=ACOUSTIC_SCALE)
    split(p)
    workers(p)
    p.set_defaults(func=cmd_decode, manifest_target="out")

    p = sub.add_parser("calibrate", help="fit or apply a score calibrator")
    cal = p.add_subparsers(dest="action", required=True)
    q = cal.add_parser("fit")
    q.add_argument("--hwcns", help="scored, labeled HWCNs")
    q.add_argument("--hyps", help="max-mean hypothesis file with word confidences")
    q.add_argument("--refs", help="references for --hyps")
    q.add_argument("--out", required=True, help="calibrator file")
    q.add_argument("--smoothing-scale", type=float, default=SMOOTHING_SCALE)
    q.add_argument("--sweep-hwcns", help="held-out scored HWCNs; picks the smoothing scale by NLL")
    q.add_argument("--eval-mode", choices=CALIBRATION_MODES, default="exact")
    q.add_argument("--grid-points", type=int, default=CALIBRATION_GRID_POINTS)
    split(q, default="dev")
    q.set_defaults(func=cmd_calibrate_fit, manifest_target="out")
    q = cal.add_parser("apply")
    q.add_argument("--calibrator", required=True)
    q.add_argument("--hwcns", help="scored HWCN directory")
    q.add_argument("--decoded", help="hypothesis file with word confidences")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_calibrate_apply, manifest_target="out")

    p = sub.add_parser("eval", help="WER of hypotheses, EER/NCE of scores")
    p.add_argument("--hyps", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--scores", help="score TSV written by 'score'")
    p.add_argument("--det-points", type=int, default=DET_POINTS)
    p.add_argument("--format", choices=["text", "tsv"], default="text")
    p.add_argument("--out", help="report file (stdout if omitted)")
    p.set_defaults(func=cmd_eval, manifest_target="out")

    p = sub.add_parser("combine", help="combine recognizers by highest mean confidence")
    p.add_argument("--system", action="append", required=True, help="NAME=DECODE_FILE, repeatable")
    p.add_argument("--calibrator", action="append", help="NAME=CALIBRATOR_FILE, repeatable")
    p.add_argument("--refs", required=True)
    p.add_argument("--mode", choices=COMBINATION_MODES + ["both"], default="both")
    p.add_argument("--details", action="store_true", help="also print every subset")
    p.add_argument("--format", choices=["text", "tsv"], default="text")
    p.add_argument("--out", help="report file (stdout if omitted)")
    p.set_defaults(func=cmd_combine, manifest_target="out")

    p = sub.add_parser("experiment", help="run the full synthetic experiment")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="results directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--utterances", type=int, default=None)
    p.add_argument("--epochs", type=int, default=EPOCHS)
    p.add_argument("--tolerance-frames", type=int, default=TOLERANCE_FRAMES)
    p.add_argument("--smoothing-scale", type=float, default=SMOOTHING_SCALE)
    p.add_argument("--scope", choices=EER_SCOPES, default="all")
    p.add_argument("--quick", action="store_true", help="one model candidate, 5 epochs")
    workers(p)
    p.set_defaults(func=cmd_experiment, manifest_target="out")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    if hasattr(args, "workers"):
        args.workers = worker_count(args.workers)

    name = args.command if args.command != "calibrate" else f"calibrate {args.action}"
    manifest = RunManifest.start(name, vars(args), argv)
    try:
        args.func(args, manifest)
    except (ThiqaError, OSError) as exc:
        logger.debug("%s failed", name, exc_info=True)
        print(f"{TOOL_NAME} {name}: error: {exc}", file=sys.stderr)
        return 1

    target = getattr(args, args.manifest_target, None)
    if target:
        manifest.finish()
        manifest.save(manifest_path_for(target))
    return 0


if __name__ == "__main__":
    sys.exit(main())
