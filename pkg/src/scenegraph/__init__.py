"""Incremental semantic scene-graph engine for streaming segmented point
clouds: segment map maintenance, proximity graph with a layered feature
cache, a graph network with feature-wise attention, running-average fusion
into a globally consistent graph, and panoptic instance output."""

__version__ = "0.1.0"

from .config import ModelConfig, PipelineConfig, TrainConfig
from .errors import ConfigError, DataError, NumericError, SceneGraphError
from .scene_map import (
    FrameUpdate,
    SceneMap,
    Segment,
    SegmentProperties,
    SegmentState,
    freeze_segment,
    recompute_properties,
)

__all__ = [
    "ModelConfig",
    "PipelineConfig",
    "TrainConfig",
    "ConfigError",
    "DataError",
    "NumericError",
    "SceneGraphError",
    "FrameUpdate",
    "SceneMap",
    "Segment",
    "SegmentProperties",
    "SegmentState",
    "freeze_segment",
    "recompute_properties",
]
