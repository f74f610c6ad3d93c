"""HTTP session service around the dialogue engine.

One process serves many concurrent sessions over a shared immutable
index. Each session is protected by its own lock: a turn that arrives
while another is running gets a 409 instead of corrupting state.
Sessions expire after an idle TTL and are periodically snapshotted to
disk so a restart picks up where it left off.
"""

import configparser
import json
import os
import secrets
import threading
import time
from dataclasses import dataclass, field

from .dialogue import DialogueState, Engine, FlowParams, TurnResult
from .encoder import load_model
from .errors import ProviderError, UnknownCity
from .featurizer import load_vocab
from .index import load_index
from .intent_booking import load_classifier
from .multilingual import SUPPORTED_LANGUAGES, make_provider

DEFAULT_TTL_SECONDS = 30 * 60
DEFAULT_SNAPSHOT_INTERVAL = 30.0
SESSION_TOKEN_BYTES = 32  # 256 bits of entropy


@dataclass
class ServiceConfig:
    cities: dict[str, str]               # city -> index path
    vocab_path: str
    model_path: str
    reset_classifier_path: str | None = None
    booking_classifier_path: str | None = None
    provider_spec: str = "identity"
    flow: FlowParams = field(default_factory=FlowParams)
    listen_host: str = "127.0.0.1"
    listen_port: int = 8080
    session_ttl_seconds: float = DEFAULT_TTL_SECONDS
    snapshot_path: str | None = None
    snapshot_interval_seconds: float = DEFAULT_SNAPSHOT_INTERVAL
    photos_dir: str | None = None

    def validate_paths(self) -> None:
        missing = [p for p in
                   [self.vocab_path, self.model_path,
                    self.reset_classifier_path, self.booking_classifier_path,
                    *self.cities.values()]
                   if p and not os.path.exists(p)]
        if missing:
            raise FileNotFoundError(
                f"configured paths do not exist: {missing}")


def load_config(path=None) -> ServiceConfig:
    """Read the INI config; POLYFIND_CONFIG overrides the path argument."""
    path = os.environ.get("POLYFIND_CONFIG", path)
    if path is None:
        raise ValueError("no config path given and POLYFIND_CONFIG unset")
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"config file not found: {path}")
    service = parser["service"] if parser.has_section("service") else {}
    models = parser["models"]
    flow_section = parser["flow"] if parser.has_section("flow") else {}
    flow = FlowParams(
        top_n=int(flow_section.get("top_n", 20)),
        sharpness=float(flow_section.get("sharpness", 5.0)),
        threshold=float(flow_section.get("threshold", 0.8)),
        max_display=int(flow_section.get("max_display", 5)),
    )
    listen = service.get("listen", "127.0.0.1:8080")
    host, _, port = listen.rpartition(":")
    translation = (parser["translation"]
                   if parser.has_section("translation") else {})
    return ServiceConfig(
        cities=dict(parser["cities"]) if parser.has_section("cities") else {},
        vocab_path=models["vocab"],
        model_path=models["model"],
        reset_classifier_path=models.get("reset_classifier"),
        booking_classifier_path=models.get("booking_classifier"),
        provider_spec=translation.get("provider", "identity"),
        flow=flow,
        listen_host=host or "127.0.0.1",
        listen_port=int(port),
        session_ttl_seconds=float(
            service.get("session_ttl_seconds", DEFAULT_TTL_SECONDS)),
        snapshot_path=service.get("snapshot_path"),
        snapshot_interval_seconds=float(
            service.get("snapshot_interval_seconds",
                        DEFAULT_SNAPSHOT_INTERVAL)),
        photos_dir=service.get("photos_dir"),
    )


def build_engine(config: ServiceConfig) -> Engine:
    """Load every artifact referenced by the config into a live engine."""
    config.validate_paths()
    vocab = load_vocab(config.vocab_path)
    model = load_model(config.model_path)
    cities = {city: load_index(path) for city, path in config.cities.items()}
    reset_clf = (load_classifier(config.reset_classifier_path)
                 if config.reset_classifier_path else None)
    booking_clf = (load_classifier(config.booking_classifier_path)
                   if config.booking_classifier_path else None)
    provider = make_provider(config.provider_spec)
    return Engine(model, vocab, cities, params=config.flow,
                  reset_classifier=reset_clf, booking_classifier=booking_clf,
                  provider=provider)


@dataclass
class SessionRecord:
    session_id: str
    state: DialogueState
    language: str
    created: float
    updated: float
    lock: threading.Lock = field(default_factory=threading.Lock)

    def to_snapshot(self) -> dict:
        return {"session_id": self.session_id, "language": self.language,
                "created": self.created, "updated": self.updated,
                "state": self.state.snapshot()}

    @classmethod
    def from_snapshot(cls, data: dict) -> "SessionRecord":
        return cls(session_id=data["session_id"],
                   state=DialogueState.from_snapshot(data["state"]),
                   language=data["language"], created=data["created"],
                   updated=data["updated"])


class SessionStore:
    """Thread-safe session registry with idle expiry and snapshots."""

    def __init__(self, ttl_seconds: float = DEFAULT_TTL_SECONDS, clock=time.time):
        self.ttl_seconds = ttl_seconds
        self._clock = clock
        self._sessions: dict[str, SessionRecord] = {}
        self._registry_lock = threading.Lock()

    def new_token(self) -> str:
        return secrets.token_urlsafe(SESSION_TOKEN_BYTES)

    def add(self, record: SessionRecord) -> None:
        with self._registry_lock:
            self._sessions[record.session_id] = record

    def get(self, session_id: str) -> SessionRecord | None:
        now = self._clock()
        with self._registry_lock:
            record = self._sessions.get(session_id)
            if record is None:
                return None
            if now - record.updated > self.ttl_seconds:
                del self._sessions[session_id]
                return None
            return record

    def touch(self, record: SessionRecord) -> None:
        record.updated = self._clock()

    def expire_idle(self) -> int:
        now = self._clock()
        with self._registry_lock:
            dead = [sid for sid, rec in self._sessions.items()
                    if now - rec.updated > self.ttl_seconds]
            for sid in dead:
                del self._sessions[sid]
        return len(dead)

    def __len__(self) -> int:
        with self._registry_lock:
            return len(self._sessions)

    def snapshot_to(self, path) -> None:
        with self._registry_lock:
            payload = {"sessions": [rec.to_snapshot()
                                    for rec in self._sessions.values()]}
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
        os.replace(tmp, path)

    def load_from(self, path) -> int:
        if not os.path.exists(path):
            return 0
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        count = 0
        with self._registry_lock:
            for data in payload.get("sessions", []):
                record = SessionRecord.from_snapshot(data)
                self._sessions[record.session_id] = record
                count += 1
        return count


class SnapshotWorker:
    """Background thread flushing the store to disk every interval."""

    def __init__(self, store: SessionStore, path, interval: float):
        self.store = store
        self.path = path
        self.interval = interval
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.wait(self.interval):
            self.store.expire_idle()
            self.store.snapshot_to(self.path)

    def stop(self) -> None:
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=5.0)
        self.store.snapshot_to(self.path)


def turn_payload(result: TurnResult, engine: Engine, city: str) -> dict:
    index = engine.city_index(city)
    responses = [{
        "entity_id": eid,
        "entity_name": index.entity_names[eid],
        "kind": cand.kind,
        "text": cand.text,
        "score": score,
    } for eid, cand, score in result.displayed]
    photos = [{
        "photo_id": cand.photo_ref,
        "caption": cand.text if cand.has_caption else None,
        "score": score,
    } for cand, score in result.photos]
    payload = {
        "responses": responses,
        "photos": photos,
        "spoken": result.spoken,
        "entities_remaining": list(result.relevant_after),
        "mode": result.mode_after,
    }
    if result.booking is not None:
        payload["booking"] = result.booking.as_dict()
    if result.confirmation is not None:
        payload["confirmation"] = result.confirmation
    return payload


def _error(status: int, code: str, message: str):
    from fastapi.responses import JSONResponse
    return JSONResponse(status_code=status,
                        content={"error": {"code": code, "message": message}})


def create_app(engine: Engine, store: SessionStore | None = None,
               photos_dir: str | None = None,
               snapshot_path: str | None = None,
               snapshot_interval: float = DEFAULT_SNAPSHOT_INTERVAL):
    """Assemble the FastAPI application around a live engine."""
    from contextlib import asynccontextmanager

    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import FileResponse, JSONResponse

    store = store if store is not None else SessionStore()
    worker = None

    @asynccontextmanager
    async def lifespan(app):
        nonlocal worker
        if snapshot_path:
            store.load_from(snapshot_path)
            worker = SnapshotWorker(store, snapshot_path, snapshot_interval)
            worker.start()
        yield
        if worker is not None:
            worker.stop()
        elif snapshot_path:
            store.snapshot_to(snapshot_path)

    app = FastAPI(title="polyfind", lifespan=lifespan)
    app.state.engine = engine
    app.state.store = store

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return _error(400, "bad_request", "malformed request body")

    @app.post("/v1/sessions")
    def create_session(request: Request, payload: dict):
        if not isinstance(payload, dict) or "city" not in payload:
            return _error(400, "bad_request", "body must include 'city'")
        city = payload["city"]
        language = payload.get("language")
        try:
            index = engine.city_index(city)
        except UnknownCity as exc:
            return _error(404, "unknown_city", str(exc))
        if language is None:
            language = index.language
        if language not in SUPPORTED_LANGUAGES:
            return _error(400, "unsupported_language",
                          f"language {language!r} is not supported")
        if language != index.language:
            return _error(400, "language_mismatch",
                          f"city {city!r} serves language "
                          f"{index.language!r}, not {language!r}")
        sid = store.new_token()
        state = engine.new_session(city, sid)
        now = store._clock()
        store.add(SessionRecord(session_id=sid, state=state,
                                language=language, created=now, updated=now))
        return JSONResponse(status_code=201, content={"session_id": sid})

    @app.post("/v1/sessions/{session_id}/turns")
    def post_turn(session_id: str, payload: dict):
        if not isinstance(payload, dict) or "text" not in payload \
                or not isinstance(payload["text"], str):
            return _error(400, "bad_request", "body must include 'text'")
        record = store.get(session_id)
        if record is None:
            return _error(404, "unknown_session",
                          "session does not exist or has expired")
        if not record.lock.acquire(blocking=False):
            return _error(409, "busy", "a turn is already in progress")
        try:
            result = engine.step(record.state, payload["text"])
            store.touch(record)
        except ProviderError as exc:
            return _error(502, "provider_error", str(exc))
        finally:
            record.lock.release()
        return turn_payload(result, engine, record.state.city)

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        record = store.get(session_id)
        if record is None:
            return _error(404, "unknown_session",
                          "session does not exist or has expired")
        state = record.state
        return {
            "session_id": record.session_id,
            "city": state.city,
            "language": record.language,
            "entities_remaining": list(state.relevant),
            "mode": state.mode,
            "booking": state.booking.as_dict(),
            "history_length": len(state.history),
            "created": record.created,
            "updated": record.updated,
        }

    if photos_dir:
        photo_root = os.path.realpath(photos_dir)

        @app.get("/v1/photos/{photo_id:path}")
        def get_photo(photo_id: str):
            target = os.path.realpath(os.path.join(photo_root, photo_id))
            if not target.startswith(photo_root + os.sep):
                return _error(404, "unknown_photo", "no such photo")
            if not os.path.isfile(target):
                return _error(404, "unknown_photo", "no such photo")
            return FileResponse(target)

    return app


def app_from_config(path=None):
    """Config-file entry point used by the serve command."""
    config = load_config(path)
    engine = build_engine(config)
    store = SessionStore(ttl_seconds=config.session_ttl_seconds)
    return create_app(engine, store, photos_dir=config.photos_dir,
                      snapshot_path=config.snapshot_path,
                      snapshot_interval=config.snapshot_interval_seconds)
