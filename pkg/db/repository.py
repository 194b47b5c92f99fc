"""
Data access layer for the run ledger.
"""
import math
from datetime import datetime, timezone
from typing import Optional
from sqlalchemy.orm import Session

from .models import SimulationRun, StepRecordRow, PlotRecord


def utc_now() -> datetime:
    """Get current UTC time (timezone-aware)."""
    return datetime.now(timezone.utc)


def _nullable(value: float) -> Optional[float]:
    """NaN marks 'not applicable' in trajectories; the ledger stores NULL."""
    return None if value is None or math.isnan(value) else float(value)


class RunRepository:
    """Repository for simulation ledger operations."""

    def __init__(self, session: Session, batch_size: int = 50):
        self.session = session
        self._pending_steps: list[StepRecordRow] = []
        self._batch_size = batch_size

    # Run operations
    def create_run(
        self,
        label: str,
        manifold: str,
        seed: int,
        resolved_config: str
    ) -> SimulationRun:
        """Create a new simulation run."""
        run = SimulationRun(
            label=label,
            manifold=manifold,
            seed=seed,
            resolved_config=resolved_config,
            started_at=utc_now()
        )
        self.session.add(run)
        self.session.commit()
        self.session.refresh(run)
        return run

    def end_run(
        self,
        run_id: int,
        stopping_reason: str,
        lambda_hat: Optional[float] = None
    ) -> Optional[SimulationRun]:
        """Mark a run as finished."""
        # Flush any pending steps before ending
        self._flush_pending_steps()

        run = self.session.get(SimulationRun, run_id)
        if run:
            run.ended_at = utc_now()
            run.stopping_reason = stopping_reason
            run.lambda_hat = _nullable(lambda_hat)
            self.session.commit()
        return run

    def get_run(self, run_id: int) -> Optional[SimulationRun]:
        """Get a run by ID."""
        return self.session.get(SimulationRun, run_id)

    def list_runs(self) -> list[SimulationRun]:
        """All recorded runs, oldest first."""
        return self.session.query(SimulationRun).order_by(SimulationRun.id.asc()).all()

    def get_unfinished_runs(self) -> list[SimulationRun]:
        """Get all runs that never ended (crashed or interrupted)."""
        return self.session.query(SimulationRun).filter(
            SimulationRun.ended_at.is_(None)
        ).all()

    def _flush_pending_steps(self):
        """Flush all pending step rows to the database."""
        if self._pending_steps:
            self.session.add_all(self._pending_steps)
            self.session.commit()
            self._pending_steps = []

    # Step operations
    def add_step(
        self,
        run_id: int,
        step: int,
        mu: str,
        sigma2: float,
        sigma2_updated: float = math.nan,
        drift_kept: float = math.nan,
        drift_updated: float = math.nan,
        residual: float = math.nan,
        mean_loss: float = math.nan,
        n_updated: int = 0
    ) -> StepRecordRow:
        """
        Record one trajectory row with batching.

        Rows are batched and committed every N steps to reduce DB load.
        """
        row = StepRecordRow(
            run_id=run_id,
            step=step,
            mu=mu,
            sigma2=sigma2,
            sigma2_updated=_nullable(sigma2_updated),
            drift_kept=_nullable(drift_kept),
            drift_updated=_nullable(drift_updated),
            residual=_nullable(residual),
            mean_loss=_nullable(mean_loss),
            n_updated=n_updated
        )

        # Add to pending batch
        self._pending_steps.append(row)

        # Commit if batch is full
        if len(self._pending_steps) >= self._batch_size:
            self._flush_pending_steps()

        return row

    def get_run_steps(
        self,
        run_id: int,
        limit: Optional[int] = None
    ) -> list[StepRecordRow]:
        """Get all step rows for a run, ordered by step."""
        query = self.session.query(StepRecordRow).filter(
            StepRecordRow.run_id == run_id
        ).order_by(StepRecordRow.step.asc())

        if limit:
            query = query.limit(limit)

        return query.all()

    def get_step_count(self, run_id: int) -> int:
        """Get total number of recorded steps for a run."""
        return self.session.query(StepRecordRow).filter(
            StepRecordRow.run_id == run_id
        ).count()

    # Plot operations
    def add_plot(
        self,
        run_id: int,
        plot_path: str
    ) -> PlotRecord:
        """Record a written plot."""
        # Flush pending steps before adding the plot
        self._flush_pending_steps()

        plot = PlotRecord(
            run_id=run_id,
            plot_path=plot_path,
            generated_at=utc_now()
        )
        self.session.add(plot)
        self.session.commit()
        self.session.refresh(plot)
        return plot

    def get_run_plots(self, run_id: int) -> list[PlotRecord]:
        """Get all plots for a run."""
        return self.session.query(PlotRecord).filter(
            PlotRecord.run_id == run_id
        ).order_by(PlotRecord.id.asc()).all()
