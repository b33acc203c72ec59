"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

EncodingName = Literal["ndjson", "binary"]


class RecordSimRequest(BaseModel):
    spec_path: str = Field(description="sim session config (.simspec) on the server")
    output_path: str = Field(description="recording destination on the server")
    polling_rate_hz: float = Field(gt=0)
    duration_s: Optional[float] = Field(default=None, gt=0)
    encoding: Optional[EncodingName] = None
    realtime: bool = False


class RecordSimResponse(BaseModel):
    output_path: str
    encoding: EncodingName
    snapshot_count: int
    record_count: int
    devices: list[str]
    file_size_bytes: int
    start_time: str
    end_time: Optional[str]
    dropped_samples: dict[str, int]


class ViolationModel(BaseModel):
    index: int
    rule: str
    message: str


class ValidateRequest(BaseModel):
    path: str


class ValidateResponse(BaseModel):
    path: str
    record_count: int
    ok: bool
    violations: list[ViolationModel]


class DeviceSummaryModel(BaseModel):
    device_id: int
    name: str
    serial: str
    features: dict[str, str]
    appearances: int
    presence_ratio: float
    missed_cycles: int


class InfoResponse(BaseModel):
    path: str
    snapshot_count: int
    duration_s: float
    effective_rate_hz: float
    participant_id: Optional[str]
    session_label: Optional[str]
    polling_rate_hz: Optional[float]
    start_time: Optional[str]
    end_time: Optional[str]
    devices: list[DeviceSummaryModel]


class ConvertRequest(BaseModel):
    input_path: str
    output_path: str
    from_encoding: Optional[EncodingName] = None
    to_encoding: Optional[EncodingName] = None


class ConvertResponse(BaseModel):
    records: int
    output_path: str
    from_encoding: EncodingName
    to_encoding: EncodingName
    output_size_bytes: int


class ExportRequest(BaseModel):
    input_path: str
    csv_path: str
    select: list[str] = Field(default_factory=list,
                              description="device:feature patterns, '*' wildcards")
    target_rate_hz: float = Field(gt=0)
    staleness_horizon_ms: Optional[float] = Field(default=None, gt=0)
    method: Literal["interpolate", "nearest"] = "interpolate"
    responses_path: Optional[str] = None


class ExportResponse(BaseModel):
    csv_path: str
    rows: int
    columns: int
    matched: Optional[bool]


class SessionStartRequest(BaseModel):
    spec_path: str
    output_path: str
    polling_rate_hz: float = Field(gt=0)
    duration_s: Optional[float] = Field(default=None, gt=0)
    encoding: Optional[EncodingName] = None
    realtime: bool = True


class SessionState(BaseModel):
    session_id: str
    status: Literal["running", "finished", "failed"]
    output_path: str
    cycles: int
    error: Optional[str] = None
    result: Optional[RecordSimResponse] = None


class ErrorDetail(BaseModel):
    code: str
    message: str
