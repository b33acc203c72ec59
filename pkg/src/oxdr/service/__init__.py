"""FastAPI service wrapping the recording and analysis workflows."""

from .app import app, create_app

__all__ = ["app", "create_app"]
