"""HTTP service exposing rating tasks and reports to rater clients."""

from .app import app_from_config, create_app

__all__ = ["app_from_config", "create_app"]
