"""HTTP surface for sessions: REST + server-sent status events."""

from .app import create_app

__all__ = ["create_app"]
