"""
Matplotlib SVG charts for bootstrap trajectories and robustness grids.
"""
from pathlib import Path
from typing import Optional, Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

# Fixed element ids so identical data gives identical SVG bytes
SVG_HASH_SALT = 'bootstrap-align'


class ChartGenerator:
    """
    Generates SVG charts for simulation outputs.

    Variance trajectories go on a log axis with the predicted geometric
    decay overlaid; robustness grids become one polar plot per scale.
    """

    def __init__(self, charts_dir: Path):
        """
        Initialize chart generator.

        Args:
            charts_dir: Existing directory to save charts in
        """
        self.charts_dir = Path(charts_dir)

        # Style settings
        plt.style.use('seaborn-v0_8-whitegrid')
        plt.rcParams['svg.hashsalt'] = SVG_HASH_SALT

    def _save(self, fig, filename: str) -> str:
        filepath = self.charts_dir / filename
        fig.savefig(filepath, format='svg', bbox_inches='tight', metadata={'Date': None})
        plt.close(fig)
        return str(filepath)

    def variance_chart(
        self,
        steps: Sequence[int],
        sigma2: Sequence[float],
        label: str,
        predicted: Optional[Sequence[float]] = None,
        lambda_theory: Optional[float] = None,
        lambda_hat: Optional[float] = None,
        r_squared: Optional[float] = None,
        filename: str = 'variance.svg'
    ) -> str:
        """
        Plot sigma_t^2 on a log axis.

        Args:
            steps: Step indices
            sigma2: Measured pose variance per step
            label: Run label for the title
            predicted: Optional one-step predictions (NaN where not applicable)
            lambda_theory: Optional contraction rate; draws lambda^t sigma_0^2
            lambda_hat: Optional fitted rate, shown in the annotation
            r_squared: Fit quality for the annotation

        Returns:
            Path to saved chart file
        """
        if len(steps) == 0 or len(sigma2) == 0:
            raise ValueError("No data to chart")

        steps = np.asarray(steps, dtype=float)
        sigma2 = np.asarray(sigma2, dtype=float)
        # Zeros cannot sit on a log axis
        shown = np.where(sigma2 > 0, sigma2, np.nan)

        fig, ax = plt.subplots(figsize=(10, 6))
        ax.plot(steps, shown, label='measured $\\sigma_t^2$', color='#2E86AB', linewidth=2, marker='o', markersize=3)

        if predicted is not None:
            pred = np.asarray(predicted, dtype=float)
            ax.plot(
                steps,
                np.where(pred > 0, pred, np.nan),
                label='one-step prediction',
                color='#28A745',
                linewidth=1,
                linestyle='--',
                alpha=0.8
            )

        if lambda_theory is not None and sigma2[0] > 0:
            ax.plot(
                steps,
                sigma2[0] * lambda_theory ** steps,
                label=f'$\\lambda^t\\sigma_0^2$, $\\lambda$={lambda_theory:.4f}',
                color='#DC3545',
                linewidth=1,
                linestyle=':'
            )

        ax.set_yscale('log')
        ax.set_xlabel('Bootstrap step', fontsize=12)
        ax.set_ylabel('Pose variance', fontsize=12)
        ax.set_title(label, fontsize=14, fontweight='bold')

        stats = [f'$\\sigma_0^2$: {sigma2[0]:.4g}', f'final: {sigma2[-1]:.4g}']
        if lambda_hat is not None:
            stats.append(f'fitted $\\hat\\lambda$: {lambda_hat:.4f}')
        if r_squared is not None:
            stats.append(f'$r^2$: {r_squared:.4f}')
        ax.text(
            0.02, 0.02,
            '\n'.join(stats),
            transform=ax.transAxes,
            fontsize=10,
            verticalalignment='bottom',
            bbox=dict(boxstyle='round', facecolor='white', alpha=0.8)
        )

        ax.legend(loc='upper right')
        ax.grid(True, alpha=0.3)
        plt.tight_layout()
        return self._save(fig, filename)

    def polar_accuracy_charts(
        self,
        angles: Sequence[float],
        scales: Sequence[float],
        accuracy: np.ndarray,
        label: str,
        baseline: Optional[np.ndarray] = None,
        canprior: Optional[np.ndarray] = None,
        prefix: str = 'robustness'
    ) -> list[str]:
        """
        One polar plot per scale: accuracy against rotation angle, area shaded.

        Args:
            angles: Rotation angles in radians (evaluation grid order)
            scales: Scale factors, one subplot file each
            accuracy: (len(angles), len(scales)) accuracies in [0, 1]
            baseline: Optional same-shape accuracies drawn as a dashed reference
            canprior: Optional same-shape accuracies of the un-bootstrapped template canonicalizer

        Returns:
            Paths of saved charts, in scale order
        """
        accuracy = np.asarray(accuracy, dtype=float)
        if accuracy.shape != (len(angles), len(scales)):
            raise ValueError(f"Accuracy grid shape {accuracy.shape} does not match {len(angles)} x {len(scales)}")

        # Close the curve
        theta = np.append(np.asarray(angles, dtype=float), angles[0])
        paths = []
        for j, scale in enumerate(scales):
            fig = plt.figure(figsize=(6, 6))
            ax = fig.add_subplot(projection='polar')
            r = np.append(accuracy[:, j], accuracy[0, j])
            ax.plot(theta, r, color='#2E86AB', linewidth=2, label=label)
            ax.fill(theta, r, color='#2E86AB', alpha=0.2)
            if baseline is not None:
                b = np.append(baseline[:, j], baseline[0, j])
                ax.plot(theta, b, color='#DC3545', linewidth=1, linestyle='--', label='baseline')
            if canprior is not None:
                p = np.append(canprior[:, j], canprior[0, j])
                ax.plot(theta, p, color='#6C757D', linewidth=1, linestyle=':', label='canprior')
            ax.set_ylim(0.0, 1.0)
            ax.set_title(f'{label} | scale {scale:g} | mean {accuracy[:, j].mean():.3f}', fontsize=12, fontweight='bold')
            ax.legend(loc='lower right', fontsize=8)
            plt.tight_layout()
            paths.append(self._save(fig, f'{prefix}_scale_{scale:g}.svg'))
        return paths

    def sweep_heatmap(
        self,
        intervals: Sequence[int],
        alphas: Sequence[float],
        accuracy: np.ndarray,
        label: str,
        filename: str = 'sweep.svg'
    ) -> str:
        """Mean grid accuracy per (interval, alpha) cell; rows are intervals."""
        accuracy = np.asarray(accuracy, dtype=float)
        if accuracy.shape != (len(intervals), len(alphas)):
            raise ValueError(f"Sweep grid shape {accuracy.shape} does not match {len(intervals)} x {len(alphas)}")

        fig, ax = plt.subplots(figsize=(1.2 * len(alphas) + 3, 0.8 * len(intervals) + 2))
        image = ax.imshow(accuracy, cmap='viridis', vmin=0.0, vmax=1.0, aspect='auto', origin='lower')
        for i in range(len(intervals)):
            for j in range(len(alphas)):
                ax.text(j, i, f'{accuracy[i, j]:.2f}', ha='center', va='center', color='white', fontsize=9)
        ax.set_xticks(range(len(alphas)), [f'{a:g}' for a in alphas])
        ax.set_yticks(range(len(intervals)), [str(n) for n in intervals])
        ax.set_xlabel('update fraction alpha')
        ax.set_ylabel('update interval N')
        ax.set_title(f'{label} | mean grid accuracy', fontsize=12, fontweight='bold')
        ax.grid(False)
        fig.colorbar(image, ax=ax)
        plt.tight_layout()
        return self._save(fig, filename)
