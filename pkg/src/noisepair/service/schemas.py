"""Request/response models for the review HTTP API."""

from typing import Literal, Optional

from pydantic import BaseModel, Field


class CandidateOut(BaseModel):
    id: str
    window_start_s: float
    score: float
    branch: str
    source_device: str
    receiver_device: str
    review_status: str
    reviewer_note: Optional[str] = None
    created_at: float
    reviewed_at: Optional[float] = None
    lag_s: Optional[float] = None


class SeriesOut(BaseModel):
    times: list[float]
    probs: list[float]


class SpectrogramOut(BaseModel):
    t0: float
    period: float
    mel_db: list[list[float]]


class ContextOut(BaseModel):
    window_start_s: float
    window_s: float
    step_s: float
    source_series: SeriesOut
    receiver_series: SeriesOut
    receiver_spectrogram: SpectrogramOut


class ReviewRequest(BaseModel):
    decision: Literal["confirmed", "rejected", "confirm", "reject"]
    note: Optional[str] = Field(default=None, max_length=2000)


class SummaryOut(BaseModel):
    pending: int
    confirmed: int
    rejected: int
    total: int
    pr_export: Optional[str] = None


class ErrorOut(BaseModel):
    error: str
