"""Anonymous token-based contact discovery: devices, doctors, registry and a simulator."""

from .params import ModeFlags, ParamsError, ProtocolParams

__version__ = "0.1.0"

__all__ = ["ModeFlags", "ParamsError", "ProtocolParams", "__version__"]
