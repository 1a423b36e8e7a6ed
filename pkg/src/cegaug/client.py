"""HTTP client for the service, used by the CLI.

Given a server URL it talks over the network; without one it mounts the
application in-process behind the same HTTP interface, so every CLI command
exercises the real endpoints either way.
"""

from __future__ import annotations

import warnings
from typing import Optional

import httpx


def _in_process_client():
    with warnings.catch_warnings():
        # Upstream deprecation chatter about the httpx major version; the
        # in-process transport itself is fine.
        warnings.filterwarnings("ignore", module="starlette.testclient")
        warnings.filterwarnings("ignore", message=".*httpx.*")
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


class ServiceClient:
    def __init__(self, server: Optional[str] = None, timeout: float = 3600.0):
        if server:
            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=timeout)
        else:
            self._client = _in_process_client()
        self.server = server

    def post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        body = response.json()
        if response.status_code != 200:
            detail = body.get("detail", body) if isinstance(body, dict) else body
            raise RuntimeError(f"{path}: {detail}")
        return body

    def get(self, path: str) -> dict:
        response = self._client.get(path)
        response.raise_for_status()
        return response.json()

    def close(self) -> None:
        self._client.close()
