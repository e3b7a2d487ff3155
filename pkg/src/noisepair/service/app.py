"""HTTP API for the review workflow, plus static hosting of the review UI.

Reads serve from the store's in-memory state; review mutations funnel
through the store's single-writer lock, and of two racing reviews the
first write wins while the second gets a conflict. Errors come back as
{"error": message} with conventional status codes.
"""

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from ..store import AlreadyReviewedError, EventStore, NotFoundError, STATUSES
from .schemas import (
    CandidateOut,
    ContextOut,
    ReviewRequest,
    SummaryOut,
)

PR_EXPORT_ROUTE = "/api/pr-export.csv"


def create_app(
    store: EventStore,
    ui_dir: Optional[str] = None,
    pr_csv: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="noisepair review service", version="0.1.0")

    @app.exception_handler(NotFoundError)
    async def not_found(_req: Request, exc: NotFoundError):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(AlreadyReviewedError)
    async def conflict(_req: Request, exc: AlreadyReviewedError):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.exception_handler(ValueError)
    async def bad_value(_req: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def bad_request(_req: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.get("/api/events", response_model=list[CandidateOut])
    def list_events(status: Optional[str] = None):
        if status is not None and status not in STATUSES:
            raise ValueError(f"unknown status {status!r}")
        return [e.summary() for e in store.list(status)]

    @app.get("/api/events/{event_id}", response_model=CandidateOut)
    def get_event(event_id: str):
        return store.get(event_id).summary()

    @app.get("/api/events/{event_id}/context", response_model=ContextOut)
    def get_context(event_id: str):
        event = store.get(event_id)
        if event.context is None:
            raise NotFoundError(f"{event_id} context")
        return event.context

    @app.post("/api/events/{event_id}/review", response_model=CandidateOut)
    def review_event(event_id: str, body: ReviewRequest):
        return store.review(event_id, body.decision, body.note).summary()

    @app.get("/api/summary", response_model=SummaryOut)
    def summary():
        counts = store.summary()
        counts["pr_export"] = PR_EXPORT_ROUTE if pr_csv else None
        return counts

    if pr_csv:
        @app.get(PR_EXPORT_ROUTE)
        def pr_export():
            path = Path(pr_csv)
            if not path.exists():
                return JSONResponse(status_code=404, content={"error": "no PR export"})
            return FileResponse(path, media_type="text/csv")

    if ui_dir:
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
