"""Chart generation module."""
from .generator import ChartGenerator

__all__ = ['ChartGenerator']
