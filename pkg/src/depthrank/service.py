"""HTTP facade over the annotation store.

Thin by design: every behavior is a crowd-store call plus transport
codes. Wire bodies are single self-describing JSON records versioned
with a top-level "v" field.

Endpoints: POST /api/register; GET /api/task?worker=ID (200 envelope,
204 none, 403 rejected); POST /api/answer (200 ack, 400 malformed,
403 rejected, 404 unknown ids, 409 duplicate/unserved); GET /api/stats;
GET /img/<id>.
"""
from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import FileResponse, JSONResponse

from .crowd import (Choice, CrowdStore, DuplicateAnswerError, NotServedError,
                    WorkerRejectedError)

WIRE_VERSION = 1


def record(kind: str, **fields) -> dict:
    return {"v": WIRE_VERSION, "kind": kind, **fields}


def task_envelope(task, worker_id: str) -> dict:
    (y1, x1), (y2, x2) = task.query.i, task.query.j
    return record(
        "task",
        task=task.task_id,
        image=f"/img/{task.image_id}",
        points=[[x1, y1], [x2, y2]],  # display coordinates: (x, y)
        token=f"{task.task_id}:{worker_id}",
    )


def create_app(store: CrowdStore, images_dir=None, static_dir=None) -> FastAPI:
    app = FastAPI(title="depthrank annotation service")
    images = Path(images_dir) if images_dir else None

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse(record("error", message=message), status_code=status)

    @app.post("/api/register")
    def register() -> JSONResponse:
        worker = store.register_worker()
        return JSONResponse(record("worker", worker=worker))

    @app.get("/api/task")
    def get_task(worker: str = "") -> Response:
        if not worker or worker not in store.workers:
            return error(403, "unknown worker")
        try:
            task = store.next_task(worker)
        except WorkerRejectedError:
            return error(403, "worker rejected")
        if task is None:
            return Response(status_code=204)
        return JSONResponse(task_envelope(task, worker))

    @app.post("/api/answer")
    async def post_answer(request: Request) -> Response:
        try:
            body = await request.json()
        except Exception:
            return error(400, "body is not valid JSON")
        if not isinstance(body, dict):
            return error(400, "body must be a JSON record")
        worker = body.get("worker")
        task_id = body.get("task")
        choice = body.get("choice")
        response_ms = body.get("response_ms", 0)
        if not isinstance(worker, str) or not isinstance(task_id, str):
            return error(400, "worker and task must be strings")
        if choice not in (1, 2, 3):
            return error(400, f"choice must be 1, 2 or 3, got {choice!r}")
        if not isinstance(response_ms, (int, float)) or response_ms < 0:
            return error(400, "response_ms must be a nonnegative number")
        token = body.get("token")
        if token is not None and token != f"{task_id}:{worker}":
            return error(400, "token does not match this worker/task")
        if worker not in store.workers:
            return error(404, "unknown worker")
        if task_id not in store.tasks:
            return error(404, "unknown task")
        try:
            task = store.submit_answer(worker, task_id, Choice(choice),
                                       response_ms=int(response_ms))
        except WorkerRejectedError:
            return error(403, "worker rejected")
        except DuplicateAnswerError:
            return error(409, "duplicate answer")
        except NotServedError:
            return error(409, "task was not served to this worker")
        return JSONResponse(record("ack", task=task_id, state=task.state))

    @app.get("/api/stats")
    def get_stats() -> JSONResponse:
        return JSONResponse(record("stats", **store.stats()))

    @app.get("/img/{image_id}")
    def get_image(image_id: str) -> Response:
        if images is None:
            return error(404, "no image directory configured")
        safe = Path(image_id).name
        for candidate in (images / f"img_{safe}.png", images / safe):
            if candidate.is_file():
                return FileResponse(candidate, media_type="image/png")
        return error(404, f"no such image {image_id!r}")

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
