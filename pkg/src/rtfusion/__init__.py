"""RGB + thermal depth estimation with edge-guided cross-modal fusion."""

__version__ = "0.1.0"
