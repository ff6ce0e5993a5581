"""Pointing recognition and 3D direction estimation from multi-view pose tracks."""

__version__ = "0.1.0"

from .errors import DeePointError  # noqa: E402

__all__ = ["DeePointError", "__version__"]
