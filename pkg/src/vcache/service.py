"""HTTP service: immutable template resources plus per-request bindings.

``GET /tpl/<hash>.vct``  template bytes, cacheable forever
``GET /doc/<name>?k=v``  a fresh binding for the document, never cached
"""

from __future__ import annotations

import json
import re
import threading
from pathlib import Path
from typing import Mapping

from fastapi import FastAPI, Request
from fastapi.responses import Response

from .bindinggen import generate_binding
from .branchstats import TraceStore
from .docmodel import serialize
from .miniscript import Program
from .registry import Registry

TEXT = "text/plain; charset=utf-8"
IMMUTABLE = "max-age=31536000, immutable"
NO_STORE = "no-store"

_TPL_NAME = re.compile(r"([0-9a-f]{16})\.vct")


class AccessLog:
    """JSON Lines request log: ``{"method", "path", "status", "bytes"}`` per line."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()

    def write(self, method: str, path: str, status: int, nbytes: int) -> None:
        line = json.dumps({"method": method, "path": path, "status": status, "bytes": nbytes})
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def entries(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


def query_env(request: Request, program: Program) -> dict:
    """Build an Env from the query string.

    Repeated keys form a list. Variables the script iterates over are always
    lists, so a single value becomes a one-element list and an absent one an
    empty list.
    """
    env: dict = {}
    for key, value in request.query_params.multi_items():
        if key in env:
            prev = env[key]
            env[key] = prev + [value] if isinstance(prev, list) else [prev, value]
        else:
            env[key] = value
    for name in program.list_vars():
        value = env.get(name)
        if value is None:
            env[name] = []
        elif isinstance(value, str):
            env[name] = [value]
    return env


def _text(body: bytes, status: int = 200, cache: str | None = None) -> Response:
    headers = {"Cache-Control": cache} if cache else None
    return Response(content=body, status_code=status, media_type=TEXT, headers=headers)


def create_app(
    registry: Registry,
    programs: Mapping[str, Program],
    access_log: AccessLog | None = None,
    traces: TraceStore | None = None,
) -> FastAPI:
    templates = {tid.hash: serialize(t) for tid, t in registry.templates.items()}
    app = FastAPI(title="vcache", docs_url=None, redoc_url=None, openapi_url=None)

    if access_log is not None:

        @app.middleware("http")
        async def log_requests(request: Request, call_next):
            response = await call_next(request)
            nbytes = int(response.headers.get("content-length", 0))
            access_log.write(request.method, request.url.path, response.status_code, nbytes)
            return response

    @app.get("/tpl/{name}")
    def get_template(name: str) -> Response:
        m = _TPL_NAME.fullmatch(name)
        body = templates.get(m.group(1)) if m else None
        if body is None:
            return _text(b"NotFound\n", 404)
        return _text(body, cache=IMMUTABLE)

    @app.get("/doc/{name}")
    def get_document(name: str, request: Request) -> Response:
        program = programs.get(name)
        if program is None or name not in registry.docs:
            return _text(b"UnregisteredDoc\n", 404)
        try:
            env = query_env(request, program)
            result = generate_binding(program, env, registry, name)
            if traces is not None:
                traces.append(result.trace)
        except Exception as exc:
            return _text(f"{type(exc).__name__}\n".encode(), 500, cache=NO_STORE)
        return _text(serialize(result.binding), cache=NO_STORE)

    return app
