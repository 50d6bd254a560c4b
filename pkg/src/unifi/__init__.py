"""Unified multi-task Wi-Fi sensing toolkit.

Forward models turn simulated behavior into CSI-level features; a learned
inverse model maps feature sequences back to per-frame events and positions.
"""

__version__ = "0.1.0"

from . import csi, domain, features, inverse, metrics, simulator  # noqa: F401
