"""Read-only HTTP service over bundle archives.

Bundles are loaded from a directory at startup and refreshed by a polling
thread; each refresh swaps in a complete new snapshot, so request handlers
only ever see immutable state. The service holds no provider handle at all:
it can only return pre-generated text.

Every response carries a permissive cross-origin header and a cache-control
max-age, and identical requests yield byte-identical bodies.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
from pathlib import Path
from typing import Mapping

import uvicorn
from fastapi import FastAPI, Request, Response

from .bundle import (
    ExplanationBundle,
    IoFailure,
    LookupResult,
    dump_json,
    load_bundle,
    lookup,
    manifest_dict,
    slot_file_dict,
)

__all__ = [
    "NoBundles",
    "BindFailure",
    "BundleStore",
    "lookup_result_dict",
    "create_app",
    "serve",
]

logger = logging.getLogger(__name__)

DEFAULT_CACHE_MAX_AGE_S = 86400
DEFAULT_REFRESH_INTERVAL_S = 2.0


class NoBundles(RuntimeError):
    """The bundle directory held no loadable bundle archive at startup."""


class BindFailure(RuntimeError):
    """The requested address could not be bound."""


class BundleStore:
    """Directory scanner holding an immutable snapshot of loaded bundles."""

    def __init__(self, bundle_dir: str | Path):
        self.bundle_dir = Path(bundle_dir)
        self._bundles: dict[str, ExplanationBundle] = {}
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.refresh()
        if not self._bundles:
            raise NoBundles(f"no bundle archives found in {self.bundle_dir}")

    def refresh(self) -> None:
        """Rescan the directory and atomically swap the snapshot."""
        found: dict[str, ExplanationBundle] = {}
        for path in sorted(self.bundle_dir.glob("*.json")):
            try:
                bundle = load_bundle(path)
            except (IoFailure, json.JSONDecodeError, KeyError, TypeError, ValueError):
                logger.debug("skipping %s: not a bundle archive", path)
                continue
            if bundle.video_id in found:
                logger.warning(
                    "duplicate bundle for %s, keeping %s", bundle.video_id, path
                )
            found[bundle.video_id] = bundle
        if not found and self._bundles:
            logger.warning("bundle directory %s is now empty", self.bundle_dir)
        self._bundles = found

    def start_refreshing(self, interval_s: float = DEFAULT_REFRESH_INTERVAL_S) -> None:
        if self._thread is not None:
            return
        self._thread = threading.Thread(
            target=self._poll, args=(interval_s,), daemon=True, name="bundle-refresh"
        )
        self._thread.start()

    def stop_refreshing(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        self._stop.clear()

    def _poll(self, interval_s: float) -> None:
        while not self._stop.wait(interval_s):
            try:
                self.refresh()
            except Exception:
                logger.exception("bundle refresh failed; keeping old snapshot")

    @property
    def bundles(self) -> Mapping[str, ExplanationBundle]:
        return self._bundles

    def get(self, video_id: str) -> ExplanationBundle | None:
        return self._bundles.get(video_id)

    def catalog(self) -> list[dict]:
        entries = []
        for bundle in self._bundles.values():
            manifest = manifest_dict(bundle)
            entries.append(
                {
                    key: manifest[key]
                    for key in (
                        "video_id",
                        "language",
                        "interval_ms",
                        "coverage_start_ms",
                        "coverage_end_ms",
                        "levels",
                    )
                }
            )
        entries.sort(key=lambda entry: entry["video_id"])
        return entries


def lookup_result_dict(result: LookupResult) -> dict:
    return {
        "available": result.available,
        "explanation_text": result.explanation_text,
        "level": result.level,
        "slot_start_ms": result.slot_start_ms,
        "target_sentence_indices": list(result.target_sentence_indices),
    }


def _json_response(doc, status_code: int = 200) -> Response:
    return Response(
        content=dump_json(doc), status_code=status_code, media_type="application/json"
    )


def _not_found(detail: str) -> Response:
    return _json_response({"detail": detail}, status_code=404)


def create_app(
    store: BundleStore, *, cache_max_age_s: int = DEFAULT_CACHE_MAX_AGE_S
) -> FastAPI:
    app = FastAPI(title="huhbutton", docs_url=None, redoc_url=None)

    @app.middleware("http")
    async def decorate(request: Request, call_next):
        response = await call_next(request)
        response.headers["Access-Control-Allow-Origin"] = "*"
        response.headers["Cache-Control"] = f"public, max-age={cache_max_age_s}"
        return response

    @app.get("/videos")
    def videos() -> Response:
        return _json_response(store.catalog())

    @app.get("/videos/{video_id}/manifest")
    def manifest(video_id: str) -> Response:
        bundle = store.get(video_id)
        if bundle is None:
            return _not_found(f"unknown video id {video_id!r}")
        return _json_response(manifest_dict(bundle))

    @app.get("/videos/{video_id}/explanations")
    def explanations(video_id: str, t_ms: int, level: int) -> Response:
        bundle = store.get(video_id)
        if bundle is None:
            return _not_found(f"unknown video id {video_id!r}")
        return _json_response(lookup_result_dict(lookup(bundle, t_ms, level)))

    @app.get("/static/{video_id}/{level}/{filename}")
    def static_slot(video_id: str, level: int, filename: str) -> Response:
        bundle = store.get(video_id)
        if bundle is None:
            return _not_found(f"unknown video id {video_id!r}")
        if filename == "manifest.json":
            return _not_found("slot files live under /static/{id}/{level}/")
        if not filename.endswith(".json"):
            return _not_found(f"no such slot file {filename!r}")
        try:
            slot_index = int(filename[: -len(".json")])
        except ValueError:
            return _not_found(f"no such slot file {filename!r}")
        slot = next(
            (
                s
                for s in bundle.slots
                if s.level == level and s.slot_index == slot_index
            ),
            None,
        )
        if slot is None:
            return _not_found(f"no slot {slot_index} at level {level}")
        return _json_response(slot_file_dict(bundle, slot))

    return app


def _parse_bind(bind: str) -> tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep or not host:
        raise BindFailure(f"bind must look like host:port, got {bind!r}")
    try:
        return host, int(port)
    except ValueError as err:
        raise BindFailure(f"bad port in {bind!r}") from err


def serve(
    bundle_dir: str | Path,
    bind: str = "127.0.0.1:8080",
    *,
    cache_max_age_s: int = DEFAULT_CACHE_MAX_AGE_S,
    refresh_interval_s: float = DEFAULT_REFRESH_INTERVAL_S,
) -> None:
    """Run the service until interrupted. Raises NoBundles or BindFailure."""
    host, port = _parse_bind(bind)
    store = BundleStore(bundle_dir)
    app = create_app(store, cache_max_age_s=cache_max_age_s)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as err:
        sock.close()
        raise BindFailure(f"cannot bind {bind}: {err}") from err
    store.start_refreshing(refresh_interval_s)
    try:
        config = uvicorn.Config(app, log_level="info")
        uvicorn.Server(config).run(sockets=[sock])
    finally:
        store.stop_refreshing()
        sock.close()
