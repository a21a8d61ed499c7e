# evaluation/run_evaluation.py
# Thiqa - Complete Experiment Pipeline
# Generates a synthetic corpus, trains confidence models, decodes, calibrates,
# combines recognizers, saves CSV/TSV reports and charts

import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from confidence.calibration import Calibrator, calibrate_result, fit
from confidence.model import ConfidenceModel
from confidence.training import Candidate, TrainConfig, select_model
from evaluation.combine import (
    CombinationReport,
    expected_accuracy,
    run_combination_experiment,
    skew_results,
    tally_table,
)
from evaluation.metrics import (
    DetectionReport,
    WerReport,
    collect_arc_scores,
    decoded_word_scores,
    det_curve,
    detection_table,
    expected_calibration_error,
    render_table,
    wer,
    wer_table,
)
from evaluation.stages import build_hwcns, decode_hwcns, score_hwcns, worker_count
from evaluation.visualize import ConfidenceVisualizer
from lattice.config import MODEL_GRID, SMOOTHING_SCALE, TOLERANCE_FRAMES
from lattice.errors import FitError
from lattice.hwcn import Hwcn
from lattice.simgen import SimConfig, default_profiles, generate_corpus, split_of

logger = logging.getLogger(__name__)


@dataclass
class RecognizerRun:
    """Everything the pipeline produces for one recognizer."""
    name: str
    selected: Candidate
    candidates: List[Candidate]
    detection: Dict[str, DetectionReport] = field(default_factory=dict)
    wers: Dict[str, WerReport] = field(default_factory=dict)
    calibrator: Optional[Calibrator] = None
    ece: Dict[str, float] = field(default_factory=dict)


class ExperimentPipeline:
    """
    End-to-end confidence experiment on a synthetic multi-recognizer corpus.

    Steps:
    - Generate references and per-recognizer lattices
    - Build labeled HWCNs, split train/dev/eval by utterance id
    - Select a confidence model per recognizer by development-set EER
    - EER/NCE of arc posteriors vs the model on eval
    - MAP vs max-mean-confidence decoding WER on eval
    - Calibrators fitted on dev max-mean words, combination tallies raw vs calibrated
    - Expected accuracy of combining by the true correctness probabilities
    """

    def __init__(
        self,
        sim_config: Optional[SimConfig] = None,
        output_dir: Optional[str] = None,
        train_config: Optional[TrainConfig] = None,
        model_grid: Optional[List[Dict[str, object]]] = None,
        tolerance_frames: int = TOLERANCE_FRAMES,
        smoothing_scale: float = SMOOTHING_SCALE,
        eer_scope: str = "all",
        skew_factor: float = 0.2,
        workers: int = 1,
    ):
        self.sim_config = sim_config or SimConfig(profiles=default_profiles())
        self.output_dir = Path(output_dir) if output_dir else Path(__file__).parent / "results"
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.train_config = train_config or TrainConfig(seed=self.sim_config.seed)
        self.model_grid = list(model_grid or MODEL_GRID)
        self.tolerance_frames = tolerance_frames
        self.smoothing_scale = smoothing_scale
        self.eer_scope = eer_scope
        self.skew_factor = skew_factor
        self.workers = worker_count(workers)

        self.visualizer = ConfidenceVisualizer(str(self.output_dir / "charts"))

    @staticmethod
    def _split(items: Dict[str, Any], split: str) -> Dict[str, Any]:
        return {u: v for u, v in items.items() if split_of(u) == split}

    def run_recognizer(self, name: str, hwcns: Dict[str, Hwcn], refs: Dict[str, List[str]]) -> Dict[str, Any]:
        """Model selection, detection and decoding measurements, calibration for one recognizer."""
        train, dev, test = (self._split(hwcns, s) for s in ("train", "dev", "eval"))
        best, candidates = select_model(list(train.values()), list(dev.values()), self.model_grid, self.train_config)
        print(f"    Model: {best.model.describe()} (dev EER {best.dev_eer * 100:.2f}%)")

        passthrough = ConfidenceModel(kind="posterior_passthrough")
        posterior_scored = score_hwcns(passthrough, test, self.workers)
        model_scored = score_hwcns(best.model, test, self.workers)
        run = RecognizerRun(name=name, selected=best, candidates=candidates)
        for label, scored in (("posterior", posterior_scored), ("model", model_scored)):
            run.detection[label] = det_curve(collect_arc_scores(scored.values(), self.eer_scope))

        test_refs = {u: refs[u] for u in test}
        decoded = {}
        for mode in ("map", "maxmean"):
            decoded[mode] = decode_hwcns(model_scored, mode, self.sim_config.acoustic_scale, self.workers)
            run.wers[mode] = wer({u: r.words for u, r in decoded[mode].items()}, test_refs)

        run.calibrator = self.fit_calibrator(best.model, dev, refs)
        raw_pairs = decoded_word_scores(decoded["maxmean"], test_refs)
        calibrated_pairs = decoded_word_scores(
            {u: calibrate_result(run.calibrator, r) for u, r in decoded["maxmean"].items()}, test_refs
        )
        run.ece = {
            "raw": expected_calibration_error(raw_pairs),
            "calibrated": expected_calibration_error(calibrated_pairs),
        }

        print(f"    EER posterior {run.detection['posterior'].eer * 100:.2f}% -> model "
              f"{run.detection['model'].eer * 100:.2f}% | "
              f"WER MAP {run.wers['map'].wer * 100:.2f}% -> max-mean {run.wers['maxmean'].wer * 100:.2f}%")
        return {
            "run": run,
            "decoded": decoded["maxmean"],
            "reliability": {"raw": raw_pairs, "calibrated": calibrated_pairs},
        }

    def fit_calibrator(self, model: ConfidenceModel, dev: Dict[str, Hwcn], refs: Dict[str, List[str]]) -> Calibrator:
        """
        Fit on the words the max-mean decoder outputs for the dev split, so the
        calibrated scores are the ones combination compares.

        Falls back to every dev arc when the decoded words hold only one class.
        """
        dev_scored = score_hwcns(model, dev, self.workers)
        dev_decoded = decode_hwcns(dev_scored, "maxmean", self.sim_config.acoustic_scale, self.workers)
        pairs = decoded_word_scores(dev_decoded, {u: refs[u] for u in dev_decoded})
        try:
            return fit(pairs, smoothing_scale=self.smoothing_scale)
        except FitError as exc:
            logger.warning("decoded dev words cannot fit a calibrator (%s); using all dev arcs", exc)
            return fit(collect_arc_scores(dev_scored.values()), smoothing_scale=self.smoothing_scale)

    def skew_systems(self, systems: Dict[str, Dict[str, Any]], runs: Dict[str, RecognizerRun]) -> Dict[str, Dict[str, Any]]:
        """
        Put the recognizers' raw scores on mismatched scales: the best system's
        scores are squashed low, the worst system's pushed high.
        """
        order = sorted(runs, key=lambda n: (runs[n].wers["maxmean"].wer, n))
        best, worst = order[0], order[-1]
        skewed = dict(systems)
        skewed[best] = skew_results(systems[best], self.skew_factor, offset=-0.25)
        skewed[worst] = skew_results(systems[worst], self.skew_factor, offset=+0.4)
        return skewed

    def run_full_evaluation(self) -> Dict[str, Any]:
        """Run every experiment and print the summary tables."""
        print("=" * 70)
        print("THIQA - CONFIDENCE EXPERIMENT PIPELINE")
        print("=" * 70)
        print(f"Seed:        {self.sim_config.seed}")
        print(f"Utterances:  {self.sim_config.utterance_count}")
        print(f"Recognizers: {len(self.sim_config.profiles)}")
        print(f"Output Dir:  {self.output_dir}")
        print("=" * 70)

        corpus = generate_corpus(self.sim_config)
        refs = corpus.references
        eval_ids = sorted(u for u in refs if split_of(u) == "eval")
        eval_refs = {u: refs[u] for u in eval_ids}

        runs: Dict[str, RecognizerRun] = {}
        systems: Dict[str, Dict[str, Any]] = {}
        reliability: Dict[str, Any] = {}
        for i, rec in enumerate(corpus.recognizers, 1):
            name = rec.profile.name
            print(f"\n[{i}/{len(corpus.recognizers)}] {name.upper()}")
            hwcns = build_hwcns(rec.lattices, refs, self.tolerance_frames, self.sim_config.acoustic_scale, self.workers)
            outcome = self.run_recognizer(name, hwcns, refs)
            runs[name] = outcome["run"]
            systems[name] = outcome["decoded"]
            if not reliability:
                reliability = outcome["reliability"]

        calibrators = {n: r.calibrator for n, r in runs.items()}
        combination = [
            run_combination_experiment(systems, eval_refs, "raw"),
            run_combination_experiment(systems, eval_refs, "calibrated", calibrators),
        ]
        skewed = run_combination_experiment(self.skew_systems(systems, runs), eval_refs, "raw")
        skewed.mode = "raw-skewed"
        combination.append(skewed)

        oracle = expected_accuracy(
            {rec.profile.name: {u: rec.oracle[u] for u in eval_ids} for rec in corpus.recognizers},
            {rec.profile.name: {u: rec.correct_fraction[u] for u in eval_ids} for rec in corpus.recognizers},
        )

        summary = self.summarize(runs, combination, oracle)
        print("\n" + "=" * 70)
        print("EXPERIMENT SUMMARY")
        print("=" * 70)
        print("Word confidence (eval split):")
        print(render_table(summary["detection"]))
        print("Decoding WER (eval split):")
        print(render_table(summary["decoding_wer"]))
        print("Combination vs best individual system:")
        print(render_table(summary["combination"]))
        print("Combining by true correctness probability:")
        print(render_table(summary["expected_accuracy"]))
        print("=" * 70)

        return {
            "summary": summary,
            "runs": runs,
            "combination": combination,
            "expected_accuracy": oracle,
            "reliability": reliability,
        }

    def summarize(
        self,
        runs: Dict[str, RecognizerRun],
        combination: List[CombinationReport],
        oracle,
    ) -> Dict[str, pd.DataFrame]:
        detection = pd.concat(
            [detection_table(r.detection).assign(recognizer=n) for n, r in runs.items()],
            ignore_index=True,
        )[["recognizer", "method", "EER (%)", "NCE"]]
        decoding_wer = wer_table({n: r.wers for n, r in runs.items()})
        selection = pd.DataFrame(
            [dict(c.as_row(), recognizer=n, selected=c is r.selected)
             for n, r in runs.items() for c in r.candidates]
        )
        calibration = pd.DataFrame(
            [{"recognizer": n, "ECE raw": round(r.ece["raw"], 4), "ECE calibrated": round(r.ece["calibrated"], 4)}
             for n, r in runs.items()]
        )
        return {
            "detection": detection,
            "decoding_wer": decoding_wer,
            "model_selection": selection,
            "calibration": calibration,
            "combination": tally_table(combination),
            "combination_subsets": pd.concat(
                [c.records_frame().assign(mode=c.mode) for c in combination], ignore_index=True
            ),
            "expected_accuracy": oracle.frame(),
        }

    def save_reports(self, summary: Dict[str, pd.DataFrame]) -> Dict[str, str]:
        """
        One CSV per table, plus TSV copies of the headline tables.
        """
        files = {}
        for name, frame in summary.items():
            filepath = self.output_dir / f"{name}.csv"
            frame.to_csv(filepath, index=False, encoding="utf-8")
            files[name] = str(filepath)
        for name in ("detection", "decoding_wer", "combination"):
            filepath = self.output_dir / f"{name}.tsv"
            with open(filepath, "w", encoding="utf-8", newline="\n") as f:
                f.write(render_table(summary[name], "tsv"))
            files[f"{name}_tsv"] = str(filepath)
        print(f"\nReports saved to: {self.output_dir}")
        return files

    def generate_visualizations(self, eval_data: Dict[str, Any]) -> Dict[str, str]:
        runs: Dict[str, RecognizerRun] = eval_data["runs"]
        first = next(iter(runs.values()))
        return self.visualizer.generate_all_charts(
            detection=first.detection,
            loss_curves={c.model.describe(): c.loss_curve for c in first.candidates},
            reliability=eval_data["reliability"],
            wers={n: {m: rep.wer for m, rep in r.wers.items()} for n, r in runs.items()},
            tallies=[c.tally_row() for c in eval_data["combination"]],
        )

    def run_complete_pipeline(self) -> Dict[str, Any]:
        """
        Run the complete experiment pipeline:
        1. Generate and decode the corpus, measure everything
        2. Save CSV/TSV reports
        3. Generate charts

        Returns complete results package.
        """
        eval_data = self.run_full_evaluation()

        print("\n" + "-" * 40)
        print("Saving reports...")
        files = self.save_reports(eval_data["summary"])

        print("\n" + "-" * 40)
        charts = self.generate_visualizations(eval_data)

        print("\n" + "=" * 70)
        print("EXPERIMENT COMPLETE")
        print("=" * 70)
        print(f"\nOutput files:")
        for name, path in files.items():
            print(f"  - {name}: {Path(path).name}")
        print(f"  - Charts: {self.visualizer.output_dir}")

        eval_data["files"] = files
        eval_data["charts"] = charts
        return eval_data


def main():
    """Main entry point for the experiment pipeline."""
    import argparse

    from lattice.config import setup_logging
    from lattice.simgen import load_sim_config

    parser = argparse.ArgumentParser(description='Thiqa Confidence Experiment Pipeline')
    parser.add_argument('--config', type=str, default=None,
                        help='Path to a simulation config (key = value)')
    parser.add_argument('--output-dir', type=str, default=None,
                        help='Output directory for results')
    parser.add_argument('--workers', type=int, default=0,
                        help='Worker processes (0 = all cores)')
    parser.add_argument('--quick', action='store_true',
                        help='Small corpus, one model candidate, few epochs')
    args = parser.parse_args()

    setup_logging()
    cfg = load_sim_config(args.config) if args.config else SimConfig(profiles=default_profiles())
    grid, train_cfg = None, TrainConfig(seed=cfg.seed)
    if args.quick:
        cfg.utterance_count = min(cfg.utterance_count, 300)
        grid = MODEL_GRID[:1]
        train_cfg.epochs = 5
        print(f"Quick mode: {cfg.utterance_count} utterances, one model candidate")

    pipeline = ExperimentPipeline(cfg, args.output_dir, train_cfg, grid, workers=args.workers)
    results = pipeline.run_complete_pipeline()

    tally = results["summary"]["combination"]
    calibrated = tally[tally["mode"] == "calibrated"].iloc[0]
    print(f"\n{'='*70}")
    print(f"CALIBRATED COMBINATION BETTER IN: {calibrated['better (%)']:.1f}% OF SUBSETS")
    print(f"{'='*70}")
    return results


if __name__ == "__main__":
    main()
