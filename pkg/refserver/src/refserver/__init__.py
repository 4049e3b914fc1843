"""Reference model-gateway server implementing wire protocol v1."""

from .app import ShimSettings, create_app

__version__ = "0.1.0"

__all__ = ["ShimSettings", "create_app", "__version__"]
