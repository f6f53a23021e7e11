"""HTTP and websocket boundary around the filter toolkit."""

from ps2f.service.app import create_app

__all__ = ["create_app"]
