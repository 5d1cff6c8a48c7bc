"""Request/response bodies for the HTTP API."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, RootModel

from ..counting import FinishLineZone, MethodConfig, MotionVectorSpec
from ..detect import AdapterSpec, DetectorConfig
from ..geom import Polygon
from ..tracker import TrackerParams


class TrackerParamsModel(BaseModel):
    iou_threshold: float = 0.45
    score_high: float = 0.7
    score_low: float = 0.1
    cosine_distance_max: float = 0.4
    min_hits: int = 3
    max_time_lost: int = 30
    appearance: bool = False

    def to_params(self) -> TrackerParams:
        return TrackerParams.from_json(self.model_dump())


class DetectorConfigModel(BaseModel):
    score_threshold: float = 0.7
    class_allowlist: list[int] | None = None

    def to_config(self) -> DetectorConfig:
        obj: dict = {"score_threshold": self.score_threshold}
        if self.class_allowlist is not None:
            obj["class_allowlist"] = self.class_allowlist
        return DetectorConfig.from_json(obj)


class AdapterModel(BaseModel):
    command: list[str] = Field(min_length=1)
    model: str | None = None

    def to_spec(self) -> AdapterSpec:
        return AdapterSpec(command=tuple(self.command), model_path=self.model)


class CreateSessionRequest(BaseModel):
    dets_path: str | None = None
    source_path: str | None = None
    adapter: AdapterModel | None = None
    tracker: TrackerParamsModel = TrackerParamsModel()
    detector: DetectorConfigModel = DetectorConfigModel()
    gallery: bool = True


class PolygonModel(BaseModel):
    vertices: list[tuple[float, float]] = Field(min_length=3)

    def to_polygon(self) -> Polygon:
        return Polygon(vertices=tuple((float(x), float(y)) for x, y in self.vertices))


class MaskBody(RootModel):
    """PUT /mask body: a JSON array of polygons."""

    root: list[PolygonModel]


class FinishLineModel(BaseModel):
    region: PolygonModel
    dwell: int = 5

    def to_zone(self) -> FinishLineZone:
        return FinishLineZone(region=self.region.to_polygon(), dwell_frames=self.dwell)


class MotionVectorModel(BaseModel):
    anchor: tuple[float, float]
    direction_deg: float
    distance: float
    width: float

    def to_spec(self) -> MotionVectorSpec:
        return MotionVectorSpec(anchor=(self.anchor[0], self.anchor[1]),
                                direction_deg=self.direction_deg,
                                distance=self.distance, width=self.width)


class ZonesBody(BaseModel):
    finish_line: FinishLineModel | None = None
    motion_vector: MotionVectorModel | None = None


class CountRequest(BaseModel):
    method: Literal["finish_line", "motion_vector"]
    mode: Literal["quick", "full"] = "quick"
    config: ZonesBody | None = None

    def resolve_config(self, zones: dict) -> MethodConfig:
        """Inline config wins; otherwise the session's stored zones."""
        if self.config is not None:
            inline = getattr(self.config, self.method)
            if inline is not None:
                return inline.to_zone() if self.method == "finish_line" else inline.to_spec()
        if self.method not in zones:
            raise ValueError(
                f"no {self.method} zone configured; PUT zones first or inline a config"
            )
        if self.method == "finish_line":
            body = zones["finish_line"]
            return FinishLineModel(**body).to_zone()
        return MotionVectorModel(**zones["motion_vector"]).to_spec()


class EvalRequest(BaseModel):
    gt_path: str
