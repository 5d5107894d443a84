"""Pydantic request/response models for the annotation service API."""

from __future__ import annotations

from pydantic import BaseModel


class ImageInfo(BaseModel):
    image_id: str
    width: int
    height: int
    labeled: bool


class LabelRequest(BaseModel):
    """Drawn segment endpoints in image-pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float


class LabelResponse(BaseModel):
    theta_deg: float


class VelocityRequest(BaseModel):
    fd: float
    f0: float
    c: float
    theta_deg: float


class VelocityResponse(BaseModel):
    velocity_m_s: float
