"""
SQLAlchemy ORM models for the simulation run ledger.
"""
from datetime import datetime, timezone
from sqlalchemy import Column, Integer, String, DateTime, Float, ForeignKey, Text
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


def utc_now():
    """Get current UTC time (timezone-aware)."""
    return datetime.now(timezone.utc)


class SimulationRun(Base):
    """One `simulate` invocation."""
    __tablename__ = 'simulation_runs'

    id = Column(Integer, primary_key=True, autoincrement=True)
    label = Column(String(200), nullable=False)
    manifold = Column(String(100), nullable=False)
    seed = Column(Integer, nullable=False)
    resolved_config = Column(Text, nullable=False)
    stopping_reason = Column(String(50), nullable=True)
    lambda_hat = Column(Float, nullable=True)
    started_at = Column(DateTime(timezone=True), default=utc_now)
    ended_at = Column(DateTime(timezone=True), nullable=True)

    # Relationships
    steps = relationship('StepRecordRow', back_populates='run', cascade='all, delete-orphan')
    plots = relationship('PlotRecord', back_populates='run', cascade='all, delete-orphan')

    def __repr__(self):
        return f"<SimulationRun(id={self.id}, label={self.label}, manifold={self.manifold})>"


class StepRecordRow(Base):
    """Statistics of one bootstrap step."""
    __tablename__ = 'step_records'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey('simulation_runs.id'), nullable=False)
    step = Column(Integer, nullable=False)
    mu = Column(String(200), nullable=False)
    sigma2 = Column(Float, nullable=False)
    sigma2_updated = Column(Float, nullable=True)
    drift_kept = Column(Float, nullable=True)
    drift_updated = Column(Float, nullable=True)
    residual = Column(Float, nullable=True)
    mean_loss = Column(Float, nullable=True)
    n_updated = Column(Integer, nullable=False, default=0)

    # Relationships
    run = relationship('SimulationRun', back_populates='steps')

    def __repr__(self):
        return f"<StepRecordRow(step={self.step}, sigma2={self.sigma2})>"


class PlotRecord(Base):
    """An SVG written for a run."""
    __tablename__ = 'plot_records'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey('simulation_runs.id'), nullable=False)
    plot_path = Column(String(500), nullable=True)
    generated_at = Column(DateTime(timezone=True), default=utc_now)

    # Relationships
    run = relationship('SimulationRun', back_populates='plots')

    def __repr__(self):
        return f"<PlotRecord(path={self.plot_path})>"
