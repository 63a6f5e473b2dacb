"""HTTP service exposing the monitoring workflows.

The API speaks JSON arrays and site documents; file handling stays in
the CLI client. All endpoints are deterministic given the seed carried
in the request.
"""

from .app import app

__all__ = ["app"]
