"""
Run ledger connection management.
"""
from typing import Optional

from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, Session

from config import config
from .models import Base

# Global engine instance
_engine = None
_SessionLocal = None
_url: Optional[str] = None


def get_engine(url: Optional[str] = None):
    """Get or create the ledger engine; a different url replaces the cached one."""
    global _engine, _SessionLocal, _url
    url = url or config.LEDGER_URL
    if not url:
        raise ValueError("No ledger URL configured (set BOOTSTRAP_LEDGER_URL or pass --ledger)")
    if _engine is not None and url != _url:
        close_db()
    if _engine is None:
        _engine = create_engine(url, pool_pre_ping=True)
        _url = url
    return _engine


def get_session(url: Optional[str] = None) -> Session:
    """Get a new ledger session."""
    global _SessionLocal
    engine = get_engine(url)
    if _SessionLocal is None:
        _SessionLocal = sessionmaker(
            autocommit=False,
            autoflush=False,
            bind=engine
        )
    return _SessionLocal()


def init_db(url: Optional[str] = None):
    """Initialize ledger tables."""
    engine = get_engine(url)
    Base.metadata.create_all(bind=engine)


def close_db():
    """Close ledger connections."""
    global _engine, _SessionLocal, _url
    if _engine:
        _engine.dispose()
    _engine = None
    _SessionLocal = None
    _url = None
