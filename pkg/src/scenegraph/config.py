"""Configuration dataclasses for the network, the pipeline and training.

Two named size presets exist: ``paper_scale`` (the full-size network) and
``desk_scale`` (smaller dims used by tests and the synthetic experiments).
All configs serialize to plain dicts so they can be embedded in checkpoints
and JSON config files.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .errors import ConfigError

CONFIG_ENV_VAR = "SCENEGRAPH_CONFIG"


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and vocabularies of the prediction network.

    ``d_node``/``d_edge`` are the latent node/edge widths, ``d_query`` and
    ``d_target`` the attention query/target widths, split across ``heads``.
    ``encoder_widths`` are the per-point MLP widths of the point-set encoder.
    Hidden widths left at 0 are derived (see ``resolve``).
    """

    class_names: tuple[str, ...]
    predicate_names: tuple[str, ...]
    d_node: int = 512
    d_edge: int = 256
    d_query: int = 512
    d_target: int = 256
    heads: int = 8
    n_layers: int = 2
    encoder_widths: tuple[int, ...] = (64, 128, 512)
    gs_hidden: int = 0
    gv_hidden: int = 0
    ge_hidden: int = 0
    node_cls_hidden: int = 0
    pred_cls_hidden: int = 0
    n_sample_points: int = 128
    use_normals: bool = False
    use_colors: bool = False

    def __post_init__(self):
        self.validate()

    # -- derived sizes ---------------------------------------------------

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_predicates(self) -> int:
        return len(self.predicate_names)

    @property
    def point_dim(self) -> int:
        return 3 + (3 if self.use_normals else 0) + (3 if self.use_colors else 0)

    @property
    def node_raw_dim(self) -> int:
        # encoder output plus std (3), log bbox (3), log volume (1), log length (1)
        return self.encoder_widths[-1] + 8

    @property
    def edge_raw_dim(self) -> int:
        return 11

    def resolve(self, name: str) -> int:
        """Return a hidden width, deriving the default when left at 0."""
        value = getattr(self, name)
        if value:
            return value
        if name == "gs_hidden":
            return self.d_edge
        if name in ("gv_hidden", "ge_hidden"):
            return self.d_node + self.d_target
        if name == "node_cls_hidden":
            return max(self.d_node // 2, 8)
        if name == "pred_cls_hidden":
            return max(self.d_edge // 2, 8)
        raise ConfigError(f"unknown derived width: {name}")

    @property
    def same_part_index(self) -> int:
        try:
            return self.predicate_names.index("same part")
        except ValueError:
            raise ConfigError("predicate vocabulary lacks 'same part'") from None

    @property
    def none_index(self) -> int:
        try:
            return self.predicate_names.index("none")
        except ValueError:
            raise ConfigError("predicate vocabulary lacks 'none'") from None

    def validate(self) -> None:
        if self.n_classes < 2 or self.n_predicates < 2:
            raise ConfigError("need at least two classes and two predicates")
        if self.d_query % self.heads or self.d_target % self.heads:
            raise ConfigError(
                f"heads={self.heads} must divide d_query={self.d_query} "
                f"and d_target={self.d_target}"
            )
        for name in ("d_node", "d_edge", "d_query", "d_target", "heads",
                     "n_layers", "n_sample_points"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if len(self.encoder_widths) < 1:
            raise ConfigError("encoder needs at least one layer")

    # -- presets ----------------------------------------------------------

    @classmethod
    def paper_scale(cls, class_names, predicate_names, **kw) -> "ModelConfig":
        return cls(class_names=tuple(class_names),
                   predicate_names=tuple(predicate_names), **kw)

    @classmethod
    def desk_scale(cls, class_names, predicate_names, **kw) -> "ModelConfig":
        kw.setdefault("d_node", 256)
        kw.setdefault("d_edge", 128)
        kw.setdefault("d_query", 256)
        kw.setdefault("d_target", 128)
        kw.setdefault("heads", 8)
        kw.setdefault("encoder_widths", (32, 64, 128))
        kw.setdefault("n_sample_points", 64)
        return cls(class_names=tuple(class_names),
                   predicate_names=tuple(predicate_names), **kw)

    @classmethod
    def tiny(cls, class_names=("a", "b", "c"),
             predicate_names=("none", "same part", "rel"), **kw) -> "ModelConfig":
        """Very small dims for gradient checks and unit tests."""
        kw.setdefault("d_node", 16)
        kw.setdefault("d_edge", 8)
        kw.setdefault("d_query", 16)
        kw.setdefault("d_target", 8)
        kw.setdefault("heads", 2)
        kw.setdefault("encoder_widths", (8, 12))
        kw.setdefault("n_sample_points", 12)
        return cls(class_names=tuple(class_names),
                   predicate_names=tuple(predicate_names), **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["class_names"] = list(self.class_names)
        d["predicate_names"] = list(self.predicate_names)
        d["encoder_widths"] = list(self.encoder_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["class_names"] = tuple(d["class_names"])
        d["predicate_names"] = tuple(d["predicate_names"])
        d["encoder_widths"] = tuple(d["encoder_widths"])
        return cls(**d)


@dataclass(frozen=True)
class PipelineConfig:
    """Runtime knobs of the incremental engine."""

    proximity_threshold: float = 0.5
    resize_ratio: float = 0.10
    stale_frames: int = 60
    min_segment_points: int = 64
    edge_sweep_interval: int = 60
    n_sample_points: int = 128
    seed: int = 0
    sync: bool = True
    queue_size: int = 8

    def __post_init__(self):
        if self.proximity_threshold <= 0:
            raise ConfigError("proximity_threshold must be positive")
        if not 0 < self.resize_ratio < 10:
            raise ConfigError("resize_ratio out of range")
        if self.stale_frames < 1 or self.edge_sweep_interval < 1:
            raise ConfigError("frame intervals must be >= 1")
        if self.min_segment_points < 1 or self.n_sample_points < 1:
            raise ConfigError("point counts must be >= 1")
        if self.queue_size < 1:
            raise ConfigError("queue_size must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, loss and subgraph-sampling settings."""

    epochs: int = 150
    lr_base: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    pred_loss_weight: float = 0.1
    edge_dropout: float = 0.5
    sample_hops: int = 4
    sample_seeds: int = 2
    subgraphs_per_scene: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 < self.lr_base:
            raise ConfigError("lr_base must be positive")
        if not 0 <= self.edge_dropout < 1:
            raise ConfigError("edge_dropout must be in [0, 1)")
        if self.sample_hops < 0 or self.sample_seeds < 1:
            raise ConfigError("bad subgraph sampling settings")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def load_config_file(path: str | None = None) -> dict:
    """Read a JSON config file; falls back to the env var, then to {}."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return data
