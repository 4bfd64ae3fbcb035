"""HTTP/JSON API over the service: ingest, alerts, feedback, dashboards.

Every /v1 route requires the static bearer token. Errors use a uniform
envelope {code, message, detail}.
"""

from __future__ import annotations

from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Query, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .errors import (
    AlertNotFound,
    IllegalTransition,
    IrmError,
    MissingFeedback,
    OutOfRange,
)
from .service import IrmService
from .store import AlertStatus


class FeedbackBody(BaseModel):
    s_user: float
    note: str = ""
    analyst_id: str = ""


class StatusBody(BaseModel):
    status: str
    note: str = ""


class EventRow(BaseModel):
    source: str
    row: str


def _error(status_code: int, code: str, message: str, detail: str = "") -> JSONResponse:
    return JSONResponse(
        status_code=status_code,
        content={"code": code, "message": message, "detail": detail},
    )


def create_app(service: IrmService) -> FastAPI:
    app = FastAPI(title="irm", version="0.1.0")
    token = service.config.auth_token

    async def require_token(authorization: Optional[str] = Header(default=None)) -> None:
        if authorization != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    @app.exception_handler(IrmError)
    async def irm_error_handler(request: Request, exc: IrmError):
        mapping = {
            AlertNotFound: 404,
            IllegalTransition: 409,
            MissingFeedback: 409,
            OutOfRange: 422,
        }
        status = next((code for cls, code in mapping.items() if isinstance(exc, cls)), 400)
        return _error(status, exc.code, str(exc))

    @app.exception_handler(HTTPException)
    async def http_error_handler(request: Request, exc: HTTPException):
        return _error(exc.status_code, "http_error", str(exc.detail))

    @app.get("/healthz")
    async def healthz():
        return {"ok": True}

    @app.post("/v1/events", dependencies=[Depends(require_token)])
    async def ingest(request: Request, source: Optional[str] = Query(default=None)):
        content_type = request.headers.get("content-type", "")
        if "text/csv" in content_type:
            if source not in ("logon", "device", "file"):
                raise HTTPException(status_code=422, detail="CSV upload needs ?source=logon|device|file")
            body = (await request.body()).decode("utf-8", errors="replace")
            lines = [ln for ln in body.splitlines() if ln.strip()]
            if lines and lines[0].lower().startswith(("id,", "﻿id,")):
                lines = lines[1:]
            rows = [{"source": source, "row": ln} for ln in lines]
        else:
            payload = await request.json()
            if not isinstance(payload, list):
                raise HTTPException(status_code=422, detail="expected a JSON array of {source, row}")
            rows = [EventRow(**item).model_dump() for item in payload]
        report = service.run_pipeline(rows)
        tail = service.flush_idle_sessions()
        report.sessions_scored += tail.sessions_scored
        report.alerts += tail.alerts
        report.violations += tail.violations
        return report.to_dict()

    @app.get("/v1/alerts", dependencies=[Depends(require_token)])
    async def list_alerts(
        status: Optional[str] = None,
        severity: Optional[str] = None,
        user: Optional[str] = None,
        page: int = 1,
        page_size: int = 50,
    ):
        status_enum = AlertStatus(status) if status else None
        alerts = service.store.alerts(status=status_enum, severity=severity, user=user)
        start = (max(1, page) - 1) * page_size
        return {
            "total": len(alerts),
            "page": page,
            "page_size": page_size,
            "alerts": [a.to_dict() for a in alerts[start : start + page_size]],
        }

    @app.get("/v1/alerts/{alert_id}", dependencies=[Depends(require_token)])
    async def get_alert(alert_id: str):
        alert = service.store.get_alert(alert_id)
        if alert is None:
            raise AlertNotFound(alert_id)
        return alert.to_dict()

    @app.post("/v1/alerts/{alert_id}/feedback", dependencies=[Depends(require_token)])
    async def post_feedback(alert_id: str, body: FeedbackBody):
        return service.submit_feedback(
            alert_id, body.s_user, note=body.note, analyst_id=body.analyst_id
        )

    @app.post("/v1/alerts/{alert_id}/status", dependencies=[Depends(require_token)])
    async def post_status(alert_id: str, body: StatusBody):
        try:
            status = AlertStatus(body.status)
        except ValueError:
            raise HTTPException(status_code=422, detail=f"unknown status {body.status!r}")
        alert = service.store.transition_alert(alert_id, status, note=body.note)
        return alert.to_dict()

    @app.post("/v1/model/retrain", dependencies=[Depends(require_token)])
    async def retrain():
        version = service.maybe_retrain(force=True)
        current = service.model.version if service.model else 0
        return {"model_version": current, "retrained": version is not None}

    @app.get("/v1/dashboard/overview", dependencies=[Depends(require_token)])
    async def overview():
        return service.dashboard_overview()

    @app.get("/v1/dashboard/urgent", dependencies=[Depends(require_token)])
    async def urgent():
        return service.dashboard_urgent()

    @app.get("/v1/users/{user_id}/risk", dependencies=[Depends(require_token)])
    async def user_risk(user_id: str):
        return service.user_risk(user_id)

    @app.get("/v1/metrics", dependencies=[Depends(require_token)])
    async def metrics():
        return service.metrics()

    return app
