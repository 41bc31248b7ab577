"""Active-learning annotation service: store plus HTTP API."""
from medspan.alserver.store import ProjectStore, Session, StoreError, Suggestion
from medspan.alserver.service import build_app

__all__ = ["ProjectStore", "Session", "StoreError", "Suggestion", "build_app"]
