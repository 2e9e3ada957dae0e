"""HTTP service: sessions hold user controls, jobs run controlled generations.

Persistence is a plain directory tree (JSON indices plus one run directory
per job) so the service recovers sessions and completed-job metadata across
restarts without a database. A bounded FIFO queue feeds a fixed pool of
worker threads that share the immutable model stack; saturation returns 503.
"""

from __future__ import annotations

import json
import os
import queue
import threading
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from .diffusion.backend import DiffusionBackend, SamplerConfig
from .guidance import (
    ControlledResult,
    GuidanceConfig,
    GuidanceStack,
    ShadowControl,
    generate_with_control,
    load_stack,
)
from .imageio import save_image

ENV_PREFIX = "SD_DIRECTOR_"

JOB_TRANSITIONS = {
    "queued": {"running", "failed"},
    "running": {"done", "failed"},
    "done": set(),
    "failed": set(),
}


class JobStateError(RuntimeError):
    pass


@dataclass
class ServiceConfig:
    diffusion_ckpt: str | None = None
    sd_ckpt: str | None = None
    id_ckpt: str | None = None
    run_store: str = "run_store"
    pool_size: int = 1
    max_queue: int = 16
    port: int = 8000

    @classmethod
    def from_env(cls, **overrides) -> "ServiceConfig":
        def env(name, default=None, cast=str):
            raw = os.environ.get(ENV_PREFIX + name)
            return cast(raw) if raw is not None else default

        merged = {
            "diffusion_ckpt": env("DIFFUSION_CKPT"),
            "sd_ckpt": env("SD_CKPT"),
            "id_ckpt": env("ID_CKPT"),
            "run_store": env("RUN_STORE", "run_store"),
            "pool_size": env("POOL_SIZE", 1, int),
            "max_queue": env("MAX_QUEUE", 16, int),
            "port": env("PORT", 8000, int),
        }
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**merged)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class RunStore:
    """Single-writer JSON persistence for sessions, jobs, and run directories."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "runs").mkdir(exist_ok=True)
        self.lock = threading.RLock()
        self.sessions: dict[str, dict] = self._read("sessions.json")
        self.jobs: dict[str, dict] = self._read("jobs.json")

    def _read(self, name: str) -> dict:
        path = self.root / name
        if path.exists():
            return json.loads(path.read_text())
        return {}

    def _write(self, name: str, data: dict) -> None:
        path = self.root / name
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data, sort_keys=True, indent=1))
        tmp.replace(path)

    def recover_interrupted(self) -> None:
        """Jobs caught mid-flight by a restart cannot be resumed; fail them."""
        with self.lock:
            for job in self.jobs.values():
                if job["state"] in ("queued", "running"):
                    job["state"] = "failed"
                    job["error"] = "interrupted by service restart"
                    job["updated"] = _now()
            self._write("jobs.json", self.jobs)

    def put_session(self, session: dict) -> None:
        with self.lock:
            self.sessions[session["id"]] = session
            self._write("sessions.json", self.sessions)

    def get_session(self, session_id: str) -> dict:
        with self.lock:
            if session_id not in self.sessions:
                raise KeyError(session_id)
            return dict(self.sessions[session_id])

    def put_job(self, job: dict) -> None:
        with self.lock:
            self.jobs[job["id"]] = job
            self._write("jobs.json", self.jobs)

    def get_job(self, job_id: str) -> dict:
        with self.lock:
            if job_id not in self.jobs:
                raise KeyError(job_id)
            return dict(self.jobs[job_id])

    def transition(self, job_id: str, state: str, **updates) -> dict:
        with self.lock:
            job = self.jobs[job_id]
            if state not in JOB_TRANSITIONS[job["state"]]:
                raise JobStateError(f"illegal transition {job['state']} -> {state}")
            job["state"] = state
            job["updated"] = _now()
            job.update(updates)
            self._write("jobs.json", self.jobs)
            return dict(job)

    def update_progress(self, job_id: str, step: int, total: int) -> None:
        # In-memory only; progress is ephemeral and monotone within a run.
        with self.lock:
            job = self.jobs.get(job_id)
            if job is not None and job["state"] == "running":
                job["progress"] = {"step": max(step, job.get("progress", {}).get("step", 0)), "total": total}

    def run_dir(self, job_id: str) -> Path:
        return self.root / "runs" / job_id


ARTIFACT_NAMES = {
    "result.png": "image/png",
    "target_shadow.png": "image/png",
    "est_shadow_before.png": "image/png",
    "est_shadow_after.png": "image/png",
    "est_depth.png": "image/png",
    "trace.json": "application/json",
    "config.json": "application/json",
}


class SessionCreate(BaseModel):
    cond: int | None = 0
    seed: int = 0
    guidance: dict = {}


class ControlBody(BaseModel):
    mode: str
    mask_png_base64: str | None = None
    darkness: float = 1.0
    light: list[float] | None = None
    strength: float = 1.0


class _StackHolder:
    """Lazily loads and shares the immutable model stack across workers."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self._lock = threading.Lock()
        self._stack: GuidanceStack | None = None
        self._backend: DiffusionBackend | None = None

    @property
    def has_estimators(self) -> bool:
        return bool(self.config.sd_ckpt and self.config.id_ckpt)

    @property
    def has_backend(self) -> bool:
        return bool(self.config.diffusion_ckpt)

    def stack(self) -> GuidanceStack:
        with self._lock:
            if self._stack is None:
                self._stack = load_stack(self.config.diffusion_ckpt, self.config.sd_ckpt, self.config.id_ckpt)
            return self._stack

    def backend(self) -> DiffusionBackend:
        with self._lock:
            if self._stack is not None:
                return self._stack.backend
            if self._backend is None:
                self._backend = DiffusionBackend.load_checkpoint(self.config.diffusion_ckpt)
            return self._backend


def _control_from_body(body: ControlBody) -> ShadowControl:
    try:
        return ShadowControl.from_dict(body.model_dump(exclude_none=True))
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


def _run_job(job: dict, store: RunStore, holder: _StackHolder) -> None:
    job_id = job["id"]
    try:
        store.transition(job_id, "running", progress={"step": 0, "total": job["sampler"]["inference_steps"]})
        run_dir = store.run_dir(job_id)
        scfg = SamplerConfig(**job["sampler"])
        progress = lambda step, total: store.update_progress(job_id, step, total)  # noqa: E731

        if job["control"] is None:
            backend = holder.backend()
            image = backend.generate(job["cond"], job["seed"], scfg, progress=progress)
            run_dir.mkdir(parents=True, exist_ok=True)
            save_image(run_dir / "result.png", image)
            (run_dir / "config.json").write_text(
                json.dumps(
                    {"seed": job["seed"], "cond": job["cond"], "control": None, "sampler": job["sampler"]},
                    sort_keys=True,
                    indent=1,
                )
            )
        else:
            control = ShadowControl.from_dict(job["control"])
            gcfg = GuidanceConfig(**job["guidance"])
            result: ControlledResult = generate_with_control(
                job["cond"], job["seed"], control, gcfg, scfg, holder.stack(), progress=progress
            )
            result.save(run_dir)
        store.transition(job_id, "done", result_dir=str(run_dir))
    except Exception as exc:  # surface the failure in the job record
        try:
            store.transition(job_id, "failed", error=f"{type(exc).__name__}: {exc}")
        except JobStateError:
            pass


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig.from_env()
    store = RunStore(config.run_store)
    store.recover_interrupted()
    holder = _StackHolder(config)
    job_queue: queue.Queue = queue.Queue(maxsize=config.max_queue)

    def worker_loop():
        while True:
            item = job_queue.get()
            if item is None:
                return
            _run_job(item, store, holder)
            job_queue.task_done()

    workers: list[threading.Thread] = []

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        for _ in range(config.pool_size):
            thread = threading.Thread(target=worker_loop, daemon=True)
            thread.start()
            workers.append(thread)
        yield
        for _ in workers:
            job_queue.put(None)

    app = FastAPI(title="shadowsteer", lifespan=lifespan)
    app.state.config = config
    app.state.store = store

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "checkpoints": {
                "diffusion": holder.has_backend,
                "estimators": holder.has_estimators,
            },
            "pool_size": config.pool_size,
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: SessionCreate):
        session = {
            "id": uuid.uuid4().hex[:12],
            "cond": body.cond,
            "seed": body.seed,
            "guidance": body.guidance,
            "control": None,
            "created": _now(),
            "updated": _now(),
        }
        store.put_session(session)
        return session

    def _session_or_404(session_id: str) -> dict:
        try:
            return store.get_session(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return _session_or_404(session_id)

    @app.get("/sessions/{session_id}/control")
    def get_control(session_id: str):
        return {"control": _session_or_404(session_id)["control"]}

    @app.put("/sessions/{session_id}/control")
    def put_control(session_id: str, body: ControlBody):
        session = _session_or_404(session_id)
        control = _control_from_body(body)
        session["control"] = control.to_dict()
        session["updated"] = _now()
        store.put_session(session)
        return {"control": session["control"]}

    @app.post("/sessions/{session_id}/jobs", status_code=201)
    def enqueue_job(session_id: str):
        session = _session_or_404(session_id)
        if not holder.has_backend:
            raise HTTPException(status_code=422, detail="no diffusion checkpoint configured; cannot generate")
        control = session["control"]
        strength = (control or {}).get("strength", 0.0)
        if control is not None and not holder.has_estimators:
            if strength > 0.0:
                raise HTTPException(
                    status_code=422,
                    detail=(
                        "shadow control requires trained estimator checkpoints; only "
                        "strength-0 previews are possible until SD/ID estimators are configured"
                    ),
                )
            control = None  # strength-0 preview without estimators: plain generation
        guidance = {**session.get("guidance", {})}
        try:
            gcfg = GuidanceConfig(**guidance) if control is not None else None
            scfg = SamplerConfig()
            if gcfg is not None:
                gcfg.validate_against(scfg)
        except (TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=f"invalid guidance overrides: {exc}")
        job = {
            "id": uuid.uuid4().hex[:12],
            "session_id": session_id,
            "state": "queued",
            "progress": {"step": 0, "total": scfg.inference_steps},
            "cond": session["cond"],
            "seed": session["seed"],
            "control": control,
            "guidance": gcfg.to_dict() if gcfg is not None else {},
            "sampler": scfg.to_dict(),
            "result_dir": None,
            "error": None,
            "created": _now(),
            "updated": _now(),
        }
        store.put_job(job)
        try:
            job_queue.put_nowait(job)
        except queue.Full:
            store.transition(job["id"], "failed", error="worker pool saturated")
            raise HTTPException(status_code=503, detail="worker pool saturated; retry later")
        return job

    def _job_or_404(job_id: str) -> dict:
        try:
            return store.get_job(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return _job_or_404(job_id)

    @app.post("/jobs/{job_id}/replay", status_code=201)
    def replay_job(job_id: str):
        job = _job_or_404(job_id)
        if job["state"] != "done":
            raise HTTPException(status_code=409, detail=f"job {job_id} is {job['state']}, not done")
        new_job = dict(job)
        new_job.update(
            {
                "id": uuid.uuid4().hex[:12],
                "state": "queued",
                "progress": {"step": 0, "total": job["sampler"]["inference_steps"]},
                "result_dir": None,
                "error": None,
                "created": _now(),
                "updated": _now(),
            }
        )
        store.put_job(new_job)
        try:
            job_queue.put_nowait(new_job)
        except queue.Full:
            store.transition(new_job["id"], "failed", error="worker pool saturated")
            raise HTTPException(status_code=503, detail="worker pool saturated; retry later")
        return new_job

    @app.get("/jobs/{job_id}/artifacts/{name}")
    def get_artifact(job_id: str, name: str):
        job = _job_or_404(job_id)
        if name not in ARTIFACT_NAMES:
            raise HTTPException(status_code=404, detail=f"unknown artifact {name}")
        if job["state"] != "done":
            raise HTTPException(status_code=409, detail=f"job is {job['state']}; artifacts exist once done")
        path = store.run_dir(job_id) / name
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"artifact {name} not produced by this job")
        return FileResponse(path, media_type=ARTIFACT_NAMES[name])

    @app.get("/schemas")
    def schemas_index():
        return {"version": 1, "schemas": sorted(_SCHEMAS)}

    @app.get("/schemas/{name}")
    def schema(name: str):
        if name not in _SCHEMAS:
            raise HTTPException(status_code=404, detail=f"unknown schema {name}")
        return JSONResponse(_SCHEMAS[name])

    @app.exception_handler(JobStateError)
    async def job_state_error(_request, exc: JobStateError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    return app


_SCHEMAS = {
    "control": {
        "$id": "control",
        "version": 1,
        "type": "object",
        "properties": {
            "mode": {"enum": ["mask", "directional_light"]},
            "mask_png_base64": {"type": "string"},
            "darkness": {"type": "number", "minimum": 0, "maximum": 1},
            "light": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
            "strength": {"type": "number", "minimum": 0, "maximum": 1},
        },
        "required": ["mode", "strength"],
    },
    "session": {
        "$id": "session",
        "version": 1,
        "type": "object",
        "properties": {
            "id": {"type": "string"},
            "cond": {"type": ["integer", "null"]},
            "seed": {"type": "integer"},
            "guidance": {"type": "object"},
            "control": {"type": ["object", "null"]},
            "created": {"type": "string"},
            "updated": {"type": "string"},
        },
        "required": ["id", "seed"],
    },
    "job": {
        "$id": "job",
        "version": 1,
        "type": "object",
        "properties": {
            "id": {"type": "string"},
            "session_id": {"type": "string"},
            "state": {"enum": ["queued", "running", "done", "failed"]},
            "progress": {
                "type": "object",
                "properties": {"step": {"type": "integer"}, "total": {"type": "integer"}},
            },
            "result_dir": {"type": ["string", "null"]},
            "error": {"type": ["string", "null"]},
        },
        "required": ["id", "session_id", "state"],
    },
    "ablation_report": {
        "$id": "ablation_report",
        "version": 1,
        "type": "object",
        "properties": {
            "schema_version": {"type": "integer"},
            "seeds": {"type": "array", "items": {"type": "integer"}},
            "rows": {"type": "object"},
        },
        "required": ["schema_version", "seeds", "rows"],
    },
}
