"""Multi-SP quantized federated learning simulator with conjecture-based actor-critic agents."""

from .config import ExperimentConfig, load_config

__version__ = "0.1.0"

__all__ = ["ExperimentConfig", "load_config", "__version__"]
