"""HTTP service wrapping the core library, plus the shared operation layer."""

from .app import create_app

__all__ = ["create_app"]
