"""Disk-backed template cache, HTTP fetcher, and the fetch-and-render client."""

from __future__ import annotations

import contextlib
import os
import socket
import tempfile
import threading
import time
from pathlib import Path
from urllib.parse import urljoin

import httpx
import uvicorn

from .assembler import fetch_list, generate_list, plug
from .docmodel import TemplateDoc, TemplateId, parse_binding, parse_template, serialize
from .service import create_app


class DiskCache:
    """``<dir>/<hash>.vct`` files; writes go through a temp file and a rename."""

    def __init__(self, directory: str | Path) -> None:
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def _path(self, url: str) -> Path:
        return self.dir / f"{TemplateId.from_url(url).hash}.vct"

    def has(self, url: str) -> bool:
        return self._path(url).exists()

    def get(self, url: str) -> TemplateDoc:
        return parse_template(self._path(url).read_bytes())

    def put(self, url: str, doc: TemplateDoc) -> None:
        path = self._path(url)
        if path.exists():
            return
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(serialize(doc))
            os.replace(tmp, path)
        except BaseException:
            with contextlib.suppress(FileNotFoundError):
                os.unlink(tmp)
            raise


class HttpFetcher:
    def __init__(self, base_url: str, client: httpx.Client | None = None) -> None:
        self.base_url = base_url
        self.client = client or httpx.Client(timeout=10.0)
        self.calls = 0

    def fetch(self, url: str) -> bytes:
        self.calls += 1
        resp = self.client.get(urljoin(self.base_url, url))
        if resp.status_code != 200:
            raise OSError(f"GET {url} returned {resp.status_code}")
        return resp.content


class RenderError(Exception):
    pass


def fetch_render(doc_url: str, cache_dir: str | Path, client: httpx.Client | None = None) -> bytes:
    """Fetch a binding, complete the template cache over HTTP, and plug."""
    own = client is None
    client = client or httpx.Client(timeout=10.0)
    try:
        resp = client.get(doc_url)
        if resp.status_code != 200:
            name = resp.text.strip() or "HTTPError"
            raise RenderError(f"{name} (HTTP {resp.status_code})")
        binding = parse_binding(resp.content)
        urls = generate_list(binding)
        templates = fetch_list(urls, DiskCache(cache_dir), HttpFetcher(doc_url, client))
        return plug(binding, templates)
    finally:
        if own:
            client.close()


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket() as s:
        s.bind((host, 0))
        return s.getsockname()[1]


class ServerThread:
    """Runs an ASGI app under uvicorn in a background thread."""

    def __init__(self, app, host: str = "127.0.0.1", port: int = 0) -> None:
        self.host = host
        self.port = port or free_port(host)
        config = uvicorn.Config(app, host=self.host, port=self.port, log_level="warning")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self, timeout: float = 10.0) -> ServerThread:
        self.thread.start()
        deadline = time.monotonic() + timeout
        while not self.server.started:
            if time.monotonic() > deadline or not self.thread.is_alive():
                raise RuntimeError("server did not start")
            time.sleep(0.02)
        return self

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10.0)

    def __enter__(self) -> ServerThread:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be HOST:PORT, got {addr!r}")
    return host, int(port)


def serve(registry, programs, addr: str, access_log=None, traces=None) -> None:
    """Serve ``registry`` on ``addr`` (``HOST:PORT``) until interrupted."""
    host, port = parse_addr(addr)
    app = create_app(registry, programs, access_log=access_log, traces=traces)
    uvicorn.run(app, host=host, port=port, log_level="info")
