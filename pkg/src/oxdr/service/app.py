"""HTTP control plane for recording rigs and offline analysis.

One-shot endpoints wrap the same operations the CLI exposes; the
``/sessions`` endpoints additionally manage long-running recordings on
a background thread so a client can start, watch, and stop a capture.
All paths are interpreted on the server's filesystem: this service is a
lab-network control surface, not a public upload API.
"""

from __future__ import annotations

import threading
import uuid
from typing import Optional

from fastapi import FastAPI, HTTPException

from .. import ops
from ..errors import (
    AnalysisError,
    ConfigError,
    DecodeError,
    EmptySelectionError,
    OxdrError,
)
from . import schemas


def _http_error(exc: Exception) -> HTTPException:
    if isinstance(exc, FileNotFoundError):
        return HTTPException(404, detail={"code": "not_found", "message": str(exc)})
    if isinstance(exc, (ConfigError, EmptySelectionError)):
        return HTTPException(400, detail={"code": exc.code, "message": str(exc)})
    if isinstance(exc, (DecodeError, AnalysisError)):
        return HTTPException(422, detail={"code": exc.code, "message": str(exc)})
    if isinstance(exc, OxdrError):
        return HTTPException(500, detail={"code": exc.code, "message": str(exc)})
    if isinstance(exc, OSError):
        return HTTPException(500, detail={"code": "io_error", "message": str(exc)})
    raise exc


def _record_response(result: ops.RecordResult) -> schemas.RecordSimResponse:
    meta = result.metadata
    return schemas.RecordSimResponse(
        output_path=result.output_path,
        encoding=result.encoding.value,
        snapshot_count=result.snapshot_count,
        record_count=result.record_count,
        devices=list(result.device_names),
        file_size_bytes=result.file_size_bytes,
        start_time=meta.start_time.isoformat(),
        end_time=meta.end_time.isoformat() if meta.end_time else None,
        dropped_samples=result.dropped_samples,
    )


class _Session:
    def __init__(self, request: schemas.SessionStartRequest):
        self.session_id = uuid.uuid4().hex[:12]
        self.request = request
        self.stop_event = threading.Event()
        self.recorder_slot: list = []
        self.result: Optional[ops.RecordResult] = None
        self.error: Optional[str] = None
        self.thread = threading.Thread(target=self._run, daemon=True)

    def _run(self) -> None:
        try:
            self.result = ops.record_simulated(
                spec_path=self.request.spec_path,
                output_path=self.request.output_path,
                polling_rate_hz=self.request.polling_rate_hz,
                duration_s=self.request.duration_s,
                encoding=self.request.encoding,
                realtime=self.request.realtime,
                stop=self.stop_event,
                recorder_slot=self.recorder_slot,
            )
        except Exception as exc:  # surfaced through GET /sessions/{id}
            self.error = f"{type(exc).__name__}: {exc}"

    @property
    def status(self) -> str:
        if self.thread.is_alive():
            return "running"
        return "failed" if self.error else "finished"

    def state(self) -> schemas.SessionState:
        cycles = 0
        if self.recorder_slot:
            cycles = self.recorder_slot[0].stats().cycles
        return schemas.SessionState(
            session_id=self.session_id,
            status=self.status,
            output_path=self.request.output_path,
            cycles=cycles,
            error=self.error,
            result=_record_response(self.result) if self.result else None,
        )


def create_app() -> FastAPI:
    app = FastAPI(
        title="oxdr",
        description="Fixed-rate multimodal telemetry recording and analysis.",
        version="0.1.0",
    )
    sessions: dict[str, _Session] = {}
    sessions_lock = threading.Lock()

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/record-sim", response_model=schemas.RecordSimResponse)
    def record_sim(request: schemas.RecordSimRequest) -> schemas.RecordSimResponse:
        if request.duration_s is None and not request.realtime:
            raise HTTPException(400, detail={
                "code": "config_error",
                "message": "duration_s is required for simulated-clock runs"})
        try:
            result = ops.record_simulated(
                spec_path=request.spec_path,
                output_path=request.output_path,
                polling_rate_hz=request.polling_rate_hz,
                duration_s=request.duration_s,
                encoding=request.encoding,
                realtime=request.realtime,
            )
        except Exception as exc:
            raise _http_error(exc) from exc
        return _record_response(result)

    @app.post("/validate", response_model=schemas.ValidateResponse)
    def validate(request: schemas.ValidateRequest) -> schemas.ValidateResponse:
        try:
            report = ops.validate_path(request.path)
        except Exception as exc:
            raise _http_error(exc) from exc
        return schemas.ValidateResponse(
            path=request.path,
            record_count=report.record_count,
            ok=report.ok,
            violations=[schemas.ViolationModel(index=v.index, rule=v.rule,
                                               message=v.message)
                        for v in report.violations],
        )

    @app.get("/info", response_model=schemas.InfoResponse)
    def info(path: str) -> schemas.InfoResponse:
        try:
            summary = ops.summarize_path(path)
        except Exception as exc:
            raise _http_error(exc) from exc
        meta = summary.metadata
        return schemas.InfoResponse(
            path=path,
            snapshot_count=summary.snapshot_count,
            duration_s=summary.duration_s,
            effective_rate_hz=summary.effective_rate_hz,
            participant_id=meta.participant_id if meta else None,
            session_label=meta.session_label if meta else None,
            polling_rate_hz=meta.polling_rate_hz if meta else None,
            start_time=meta.start_time.isoformat() if meta else None,
            end_time=meta.end_time.isoformat() if meta and meta.end_time else None,
            devices=[schemas.DeviceSummaryModel(
                device_id=d.device_id, name=d.name, serial=d.serial,
                features=dict(d.features), appearances=d.appearances,
                presence_ratio=d.presence_ratio, missed_cycles=d.missed_cycles,
            ) for d in summary.devices],
        )

    @app.post("/convert", response_model=schemas.ConvertResponse)
    def convert(request: schemas.ConvertRequest) -> schemas.ConvertResponse:
        try:
            result = ops.convert_path(request.input_path, request.output_path,
                                      request.from_encoding, request.to_encoding)
        except Exception as exc:
            raise _http_error(exc) from exc
        return schemas.ConvertResponse(
            records=result.records, output_path=result.output_path,
            from_encoding=result.from_encoding.value,
            to_encoding=result.to_encoding.value,
            output_size_bytes=result.output_size_bytes,
        )

    @app.post("/export", response_model=schemas.ExportResponse)
    def export(request: schemas.ExportRequest) -> schemas.ExportResponse:
        try:
            result = ops.export_table(
                input_path=request.input_path, csv_path=request.csv_path,
                select=request.select, target_rate_hz=request.target_rate_hz,
                staleness_horizon_ms=request.staleness_horizon_ms,
                method=request.method, responses_path=request.responses_path)
        except Exception as exc:
            raise _http_error(exc) from exc
        return schemas.ExportResponse(csv_path=result.csv_path, rows=result.rows,
                                      columns=result.columns, matched=result.matched)

    @app.post("/sessions", response_model=schemas.SessionState, status_code=201)
    def start_session(request: schemas.SessionStartRequest) -> schemas.SessionState:
        # Fail fast on config problems before spawning the thread.
        try:
            ops.load_session_config(request.spec_path)
        except Exception as exc:
            raise _http_error(exc) from exc
        session = _Session(request)
        with sessions_lock:
            sessions[session.session_id] = session
        session.thread.start()
        return session.state()

    def _get_session(session_id: str) -> _Session:
        with sessions_lock:
            session = sessions.get(session_id)
        if session is None:
            raise HTTPException(404, detail={
                "code": "not_found", "message": f"no session {session_id!r}"})
        return session

    @app.get("/sessions/{session_id}", response_model=schemas.SessionState)
    def session_state(session_id: str) -> schemas.SessionState:
        return _get_session(session_id).state()

    @app.post("/sessions/{session_id}/stop", response_model=schemas.SessionState)
    def stop_session(session_id: str) -> schemas.SessionState:
        session = _get_session(session_id)
        session.stop_event.set()
        session.thread.join(timeout=30)
        if session.thread.is_alive():
            raise HTTPException(500, detail={
                "code": "stop_timeout",
                "message": "session did not stop within 30 s"})
        return session.state()

    return app


app = create_app()
