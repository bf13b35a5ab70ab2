"""Multi-task UNet perception plus Stanley/PI control lane-keeping simulator."""

from . import autodiff, config, control, data, models, perception, simulate, track

__all__ = ["autodiff", "config", "control", "data", "models", "perception", "simulate", "track"]

__version__ = "0.1.0"
