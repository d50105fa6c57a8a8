"""Noisy-label learning with hallucinated anchors, on small numpy networks."""
from . import correction, data, hallucinator, nn, pipeline, selection, ssl
from .config import RunConfig, load_config
from .errors import AnchorNLLError

__version__ = "0.1.0"

__all__ = [
    "AnchorNLLError", "RunConfig", "correction", "data", "hallucinator", "load_config",
    "nn", "pipeline", "selection", "ssl",
]
