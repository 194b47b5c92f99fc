"""Run ledger for bootstrap simulations."""
from .connection import close_db, get_engine, get_session, init_db
from .models import Base, SimulationRun, StepRecordRow, PlotRecord
from .repository import RunRepository

__all__ = [
    'close_db',
    'get_engine',
    'get_session',
    'init_db',
    'Base',
    'SimulationRun',
    'StepRecordRow',
    'PlotRecord',
    'RunRepository',
]
