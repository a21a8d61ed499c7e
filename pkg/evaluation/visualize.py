# evaluation/visualize.py
# Thiqa - Evaluation Visualization
# DET curves, training loss, reliability diagrams and WER charts

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib
matplotlib.use('Agg')  # Non-interactive backend for saving files
import matplotlib.pyplot as plt
import numpy as np
from scipy.stats import norm

from evaluation.metrics import DetectionReport

plt.rcParams['font.family'] = ['DejaVu Sans', 'Arial', 'sans-serif']

COLORS = {
    'primary': '#2fb38e',
    'secondary': '#1a635a',
    'success': '#22c55e',
    'warning': '#f59e0b',
    'error': '#ef4444',
    'light': '#c7f9cc',
    'gray': '#6b7280'
}

GREEN_PALETTE = ['#1a635a', '#2fb38e', '#57cc99', '#80ed99', '#c7f9cc']

# probit axes cannot show 0 or 1
_PROBIT_EPS = 1e-4


class ConfidenceVisualizer:
    """
    Chart generator for confidence experiments.

    Creates:
    - DET curves (probit axes) per scoring method
    - Training loss curves per candidate model
    - Reliability diagrams before/after calibration
    - WER bar charts (MAP vs max-mean) per recognizer
    - Combination tallies (better / worse / equal)
    """

    def __init__(self, output_dir: str = None):
        self.output_dir = Path(output_dir) if output_dir else Path(__file__).parent / "charts"
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def _save(self, filename: str) -> str:
        plt.tight_layout()
        filepath = self.output_dir / filename
        plt.savefig(filepath, dpi=150, bbox_inches='tight', facecolor='white')
        plt.close()
        return str(filepath)

    def create_det_chart(
        self,
        reports: Dict[str, DetectionReport],
        filename: str = "det_curves.png"
    ) -> str:
        """
        DET curves on normal-deviate axes with each method's EER point marked.
        """
        fig, ax = plt.subplots(figsize=(8, 8))
        for i, (name, report) in enumerate(reports.items()):
            points = np.array([(m, f) for _, m, f in report.det_points])
            if points.size == 0:
                continue
            clipped = np.clip(points, _PROBIT_EPS, 1 - _PROBIT_EPS)
            color = GREEN_PALETTE[i % len(GREEN_PALETTE)]
            ax.plot(norm.ppf(clipped[:, 1]), norm.ppf(clipped[:, 0]), color=color,
                    linewidth=2, label=f'{name} (EER {report.eer * 100:.2f}%)')
            eer_point = norm.ppf(np.clip(report.eer, _PROBIT_EPS, 1 - _PROBIT_EPS))
            ax.plot([eer_point], [eer_point], marker='o', color=color)

        ticks = np.array([0.001, 0.01, 0.05, 0.1, 0.2, 0.4, 0.6])
        ax.set_xticks(norm.ppf(ticks))
        ax.set_xticklabels([f'{t * 100:g}' for t in ticks])
        ax.set_yticks(norm.ppf(ticks))
        ax.set_yticklabels([f'{t * 100:g}' for t in ticks])
        limit = norm.ppf([0.0005, 0.7])
        ax.set_xlim(*limit)
        ax.set_ylim(*limit)
        ax.plot(limit, limit, linestyle='--', color=COLORS['gray'], alpha=0.5)
        ax.set_xlabel('False alarm probability (%)', fontsize=11)
        ax.set_ylabel('Miss probability (%)', fontsize=11)
        ax.set_title('Word Confidence - DET Curves', fontsize=14, fontweight='bold')
        ax.legend(loc='upper right')
        ax.grid(True, linestyle='--', alpha=0.3)
        return self._save(filename)

    def create_loss_chart(
        self,
        curves: Dict[str, List[float]],
        filename: str = "training_loss.png"
    ) -> str:
        """
        Cross-entropy after each epoch, one line per candidate model.
        """
        fig, ax = plt.subplots(figsize=(10, 6))
        for i, (name, curve) in enumerate(curves.items()):
            if not curve:
                continue
            ax.plot(range(len(curve)), curve, marker='o', markersize=3, linewidth=2,
                    color=GREEN_PALETTE[i % len(GREEN_PALETTE)], label=name)
        ax.set_xlabel('Epoch', fontsize=11)
        ax.set_ylabel('Mean cross-entropy', fontsize=11)
        ax.set_title('Confidence Model Training Loss', fontsize=14, fontweight='bold')
        ax.legend(loc='upper right')
        ax.yaxis.grid(True, linestyle='--', alpha=0.3)
        return self._save(filename)

    def create_reliability_diagram(
        self,
        scored: Dict[str, Sequence[Tuple[float, int]]],
        n_bins: int = 10,
        filename: str = "reliability.png"
    ) -> str:
        """
        Observed accuracy per confidence bin against the diagonal.
        """
        fig, ax = plt.subplots(figsize=(8, 8))
        edges = np.linspace(0.0, 1.0, n_bins + 1)
        centers = (edges[:-1] + edges[1:]) / 2
        for i, (name, pairs) in enumerate(scored.items()):
            values = np.clip(np.array([s for s, _ in pairs], dtype=float), 0.0, 1.0)
            labels = np.array([l for _, l in pairs], dtype=float)
            bins = np.minimum((values * n_bins).astype(int), n_bins - 1)
            accuracy = [labels[bins == b].mean() if np.any(bins == b) else np.nan for b in range(n_bins)]
            ax.plot(centers, accuracy, marker='o', linewidth=2,
                    color=GREEN_PALETTE[i % len(GREEN_PALETTE)], label=name)
        ax.plot([0, 1], [0, 1], linestyle='--', color=COLORS['gray'], label='Perfect calibration')
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_xlabel('Confidence', fontsize=11)
        ax.set_ylabel('Observed accuracy', fontsize=11)
        ax.set_title('Reliability Diagram', fontsize=14, fontweight='bold')
        ax.legend(loc='upper left')
        ax.grid(True, linestyle='--', alpha=0.3)
        return self._save(filename)

    def create_wer_bar_chart(
        self,
        wers: Dict[str, Dict[str, float]],
        filename: str = "wer_by_decoder.png"
    ) -> str:
        """
        Grouped bars: wers[recognizer][decoder] as a fraction.
        """
        fig, ax = plt.subplots(figsize=(12, 6))
        recognizers = list(wers)
        decoders = []
        for per in wers.values():
            decoders.extend(d for d in per if d not in decoders)
        if not recognizers or not decoders:
            ax.text(0.5, 0.5, 'No WER data available', ha='center', va='center')
            return self._save(filename)

        x = np.arange(len(recognizers))
        width = 0.8 / len(decoders)
        for j, decoder in enumerate(decoders):
            values = [wers[r].get(decoder, 0.0) * 100 for r in recognizers]
            bars = ax.bar(x + (j - (len(decoders) - 1) / 2) * width, values, width,
                          label=decoder, color=GREEN_PALETTE[j % len(GREEN_PALETTE)])
            for bar, val in zip(bars, values):
                ax.annotate(f'{val:.2f}', xy=(bar.get_x() + bar.get_width() / 2, bar.get_height()),
                            xytext=(0, 3), textcoords="offset points", ha='center', fontsize=8)
        ax.set_xticks(x)
        ax.set_xticklabels(recognizers)
        ax.set_ylabel('WER (%)', fontsize=11)
        ax.set_title('WER by Decoder', fontsize=14, fontweight='bold')
        ax.legend(loc='upper right')
        ax.yaxis.grid(True, linestyle='--', alpha=0.3)
        ax.set_axisbelow(True)
        return self._save(filename)

    def create_combination_chart(
        self,
        tallies: List[Dict[str, object]],
        filename: str = "combination_tally.png"
    ) -> str:
        """
        Stacked better / equal / worse bars per scoring mode.
        """
        fig, ax = plt.subplots(figsize=(8, 6))
        modes = [t['mode'] for t in tallies]
        bottom = np.zeros(len(modes))
        for key, color in (('better', COLORS['success']), ('equal', COLORS['gray']), ('worse', COLORS['error'])):
            values = np.array([t.get(key, 0) for t in tallies], dtype=float)
            ax.bar(modes, values, bottom=bottom, color=color, label=key.capitalize())
            bottom += values
        ax.set_ylabel('Recognizer subsets', fontsize=11)
        ax.set_title('Combined vs Best Individual System', fontsize=14, fontweight='bold')
        ax.legend(loc='upper right')
        ax.yaxis.grid(True, linestyle='--', alpha=0.3)
        ax.set_axisbelow(True)
        return self._save(filename)

    def generate_all_charts(
        self,
        detection: Optional[Dict[str, DetectionReport]] = None,
        loss_curves: Optional[Dict[str, List[float]]] = None,
        reliability: Optional[Dict[str, Sequence[Tuple[float, int]]]] = None,
        wers: Optional[Dict[str, Dict[str, float]]] = None,
        tallies: Optional[List[Dict[str, object]]] = None,
    ) -> Dict[str, str]:
        """
        Generate every chart whose data is present.

        Returns dict mapping chart name to file path.
        """
        charts = {}
        print("Generating visualization charts...")
        if detection:
            charts['det_curves'] = self.create_det_chart(detection)
        if loss_curves:
            charts['training_loss'] = self.create_loss_chart(loss_curves)
        if reliability:
            charts['reliability'] = self.create_reliability_diagram(reliability)
        if wers:
            charts['wer_by_decoder'] = self.create_wer_bar_chart(wers)
        if tallies:
            charts['combination_tally'] = self.create_combination_chart(tallies)
        for name, path in charts.items():
            print(f"  - {name}: {Path(path).name}")
        return charts
