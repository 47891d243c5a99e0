"""HTTP surface of the middleware: ingestion, chat orchestration, reports, health."""

from jelai.service.app import AppContext, Settings, create_app

__all__ = ["AppContext", "Settings", "create_app"]
