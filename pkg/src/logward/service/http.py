"""HTTP surface: a thin FastAPI app over a Service instance.

All responses are JSON under /api/v1. Domain errors map to status codes
here and nowhere else: ValueError 400, KeyError 404, BusyError 409.
Training is a CLI/library concern, so there is no train endpoint.
"""

from __future__ import annotations

from fastapi import FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .core import BusyError, Service, ServiceError


class InferRequest(BaseModel):
    batch_id: str
    version: int | None = None


class FeedbackRequest(BaseModel):
    verdict: str
    analyst: str


class RetrainRequest(BaseModel):
    lam: float | None = None


def create_app(service: Service) -> FastAPI:
    app = FastAPI(title="logward", version="1", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["GET", "POST"],
        allow_headers=["*"],
    )

    @app.exception_handler(BusyError)
    async def _busy(request: Request, exc: BusyError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def _bad_request(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(KeyError)
    async def _not_found(request: Request, exc: KeyError):
        detail = exc.args[0] if exc.args else str(exc)
        return JSONResponse(status_code=404, content={"detail": str(detail)})

    @app.exception_handler(ServiceError)
    async def _failed(request: Request, exc: ServiceError):
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.get("/api/v1/health")
    def health():
        return service.health()

    @app.post("/api/v1/ingest")
    async def ingest(request: Request, source: str = Query(default="api")):
        body = await request.body()
        return service.ingest(body, source=source).to_dict()

    @app.post("/api/v1/infer")
    def infer(payload: InferRequest):
        return service.run_inference(payload.batch_id, payload.version)

    @app.get("/api/v1/alerts")
    def alerts(
        status: str | None = None,
        since: str | None = None,
        page: int = Query(default=1),
        page_size: int | None = Query(default=None),
    ):
        return service.list_alerts(status, since, page, page_size)

    @app.get("/api/v1/alerts/{alert_id}")
    def alert_detail(alert_id: str):
        return service.get_alert(alert_id)

    @app.post("/api/v1/alerts/{alert_id}/feedback")
    def feedback(alert_id: str, payload: FeedbackRequest):
        return service.submit_feedback(alert_id, payload.verdict, payload.analyst)

    @app.post("/api/v1/retrain")
    def retrain(payload: RetrainRequest | None = None):
        lam = payload.lam if payload is not None else None
        return service.trigger_retrain(lam=lam)

    @app.get("/api/v1/models")
    def models():
        return service.models()

    @app.get("/api/v1/feedback/pending")
    def pending_feedback():
        return {"pending": service.pending_feedback_count()}

    return app
