"""Segmented scene map maintained incrementally from frame updates.

Segments are growing point sets. Each point row carries 9 floats:
position xyz (meters), normal xyz (unit or all-zero when absent), color rgb
in [0, 1]. Shape properties (centroid, per-axis population std, axis-aligned
bounding-box extents, max length, box volume) are maintained in O(1) per
update from running sums and running min/max, and must match a from-scratch
recomputation to 1e-9.

Point removal inside a segment is not supported; streams only add points,
merge whole segments, or remove whole segments, so min/max only ever grow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

POINT_DIM = 9
POS = slice(0, 3)
NORMAL = slice(3, 6)
COLOR = slice(6, 9)

_NORMAL_TOL = 1e-3
_COLOR_TOL = 1e-9


def as_point_array(points) -> np.ndarray:
    """Coerce to an (n, 9) float64 array, padding xyz-only input with zeros."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DataError(f"point array must be 2-d, got shape {arr.shape}")
    if arr.shape[1] == 3:
        arr = np.hstack([arr, np.zeros((arr.shape[0], 6))])
    if arr.shape[1] != POINT_DIM:
        raise DataError(f"points need 3 or {POINT_DIM} columns, got {arr.shape[1]}")
    return arr


def validate_points(arr: np.ndarray) -> None:
    """Check finiteness, unit normals (when present) and color bounds."""
    if not np.isfinite(arr).all():
        raise DataError("points contain NaN/Inf")
    norms = np.linalg.norm(arr[:, NORMAL], axis=1)
    present = norms > _COLOR_TOL
    bad = present & (np.abs(norms - 1.0) > _NORMAL_TOL)
    if bad.any():
        raise DataError(f"{int(bad.sum())} normals are not unit length")
    colors = arr[:, COLOR]
    if (colors < -_COLOR_TOL).any() or (colors > 1.0 + _COLOR_TOL).any():
        raise DataError("color components outside [0, 1]")


@dataclass(frozen=True)
class SegmentProperties:
    """Shape summary of one segment."""

    centroid: np.ndarray       # (3,)
    std: np.ndarray            # (3,) population standard deviation
    bbox: np.ndarray           # (3,) axis-aligned extents
    bbox_center: np.ndarray    # (3,)
    length: float              # max extent
    volume: float              # product of extents
    count: int


def _props_from_moments(count, psum, psq, pmin, pmax) -> SegmentProperties:
    centroid = psum / count
    # clamp at 0 before sqrt to absorb catastrophic cancellation
    var = np.maximum(psq / count - centroid * centroid, 0.0)
    bbox = pmax - pmin
    return SegmentProperties(
        centroid=centroid,
        std=np.sqrt(var),
        bbox=bbox,
        bbox_center=(pmin + pmax) * 0.5,
        length=float(bbox.max()),
        volume=float(bbox.prod()),
        count=int(count),
    )


class Segment:
    """One segment: chunked point storage plus O(1) moment bookkeeping."""

    __slots__ = ("id", "_chunks", "count", "_psum", "_psq", "_pmin", "_pmax",
                 "_cached_points")

    def __init__(self, segment_id: int):
        self.id = int(segment_id)
        self._chunks: list[np.ndarray] = []
        self.count = 0
        self._psum = np.zeros(3)
        self._psq = np.zeros(3)
        self._pmin = np.full(3, np.inf)
        self._pmax = np.full(3, -np.inf)
        self._cached_points: np.ndarray | None = None

    def add_points(self, arr: np.ndarray) -> None:
        if arr.shape[0] == 0:
            return
        pos = arr[:, POS]
        self._chunks.append(arr)
        self.count += arr.shape[0]
        self._psum += pos.sum(axis=0)
        self._psq += (pos * pos).sum(axis=0)
        self._pmin = np.minimum(self._pmin, pos.min(axis=0))
        self._pmax = np.maximum(self._pmax, pos.max(axis=0))
        self._cached_points = None

    def absorb(self, other: "Segment") -> None:
        """Union another segment's points and moments into this one."""
        self._chunks.extend(other._chunks)
        self.count += other.count
        self._psum += other._psum
        self._psq += other._psq
        self._pmin = np.minimum(self._pmin, other._pmin)
        self._pmax = np.maximum(self._pmax, other._pmax)
        self._cached_points = None

    @property
    def points(self) -> np.ndarray:
        """Full (n, 9) point array; concatenation is cached."""
        if self._cached_points is None:
            if not self._chunks:
                self._cached_points = np.zeros((0, POINT_DIM))
            elif len(self._chunks) == 1:
                self._cached_points = self._chunks[0]
            else:
                self._cached_points = np.concatenate(self._chunks, axis=0)
                self._chunks = [self._cached_points]
        return self._cached_points

    @property
    def properties(self) -> SegmentProperties:
        if self.count == 0:
            raise DataError(f"segment {self.id} has no points")
        return _props_from_moments(self.count, self._psum, self._psq,
                                   self._pmin, self._pmax)


def recompute_properties(segment: Segment) -> SegmentProperties:
    """Batch recomputation over the full point set (oracle for the
    incremental path)."""
    pts = segment.points
    if pts.shape[0] == 0:
        raise DataError(f"segment {segment.id} has no points")
    pos = pts[:, POS]
    return _props_from_moments(
        pos.shape[0],
        pos.sum(axis=0),
        (pos * pos).sum(axis=0),
        pos.min(axis=0),
        pos.max(axis=0),
    )


@dataclass
class FrameUpdate:
    """One frame of stream changes, applied in order: additions, merges,
    removals."""

    frame: int
    additions: dict[int, np.ndarray] = field(default_factory=dict)
    merges: list[tuple[int, int]] = field(default_factory=list)
    removals: list[int] = field(default_factory=list)


class SceneMap:
    """The live collection of segments. Single-writer."""

    def __init__(self):
        self.segments: dict[int, Segment] = {}

    def __contains__(self, segment_id: int) -> bool:
        return segment_id in self.segments

    def __len__(self) -> int:
        return len(self.segments)

    def _validate(self, update: FrameUpdate) -> None:
        for sid, arr in update.additions.items():
            validate_points(arr)
            if arr.shape[0] == 0:
                raise DataError(f"frame {update.frame}: empty addition for {sid}")
        live = set(self.segments) | set(update.additions)
        sources_seen = set()
        for src, dst in update.merges:
            if src == dst:
                raise DataError(f"frame {update.frame}: self-merge of {src}")
            if src in sources_seen:
                raise DataError(
                    f"frame {update.frame}: {src} merged more than once")
            if src not in live:
                raise DataError(f"frame {update.frame}: merge source {src} unknown")
            if dst not in live:
                raise DataError(
                    f"frame {update.frame}: merge destination {dst} unknown")
            sources_seen.add(src)
            live.discard(src)
        for sid in update.removals:
            if sid not in live:
                raise DataError(f"frame {update.frame}: removal of unknown {sid}")
            live.discard(sid)

    def apply_frame(self, update: FrameUpdate) -> list[int]:
        """Apply one frame update; returns sorted ids whose geometry changed
        and that are still live. Raises DataError (map unchanged) on any
        invalid reference."""
        self._validate(update)

        touched: set[int] = set()
        for sid, arr in sorted(update.additions.items()):
            arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
            seg = self.segments.get(sid)
            if seg is None:
                seg = Segment(sid)
                self.segments[sid] = seg
            seg.add_points(arr)
            touched.add(sid)
        for src, dst in update.merges:
            self.segments[dst].absorb(self.segments.pop(src))
            touched.discard(src)
            touched.add(dst)
        for sid in update.removals:
            del self.segments[sid]
            touched.discard(sid)
        return sorted(touched)


# -- frozen per-segment snapshots ------------------------------------------


@dataclass(frozen=True)
class SegmentState:
    """Immutable snapshot of one segment: properties plus a deterministic
    point sample. Consumed by the neighbor graph and the network."""

    id: int
    count: int
    centroid: np.ndarray
    std: np.ndarray
    bbox: np.ndarray
    bbox_center: np.ndarray
    length: float
    volume: float
    samples: np.ndarray  # (n_s, 9), read-only


def _reservoir_indices(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Algorithm-R reservoir sample of k indices out of n, in slot order."""
    if n <= k:
        return np.arange(n)
    reservoir = np.arange(k)
    js = rng.integers(0, np.arange(k, n) + 1)
    for i in range(k, n):
        j = js[i - k]
        if j < k:
            reservoir[j] = i
    return reservoir


def sample_seed(base_seed: int, segment_id: int, count: int) -> np.random.Generator:
    """Deterministic per-(segment, size) generator so snapshots are
    reproducible regardless of when they are taken."""
    return np.random.default_rng(
        np.random.SeedSequence([base_seed & 0xFFFFFFFF, segment_id, count]))


def freeze_segment(segment: Segment, n_sample: int, base_seed: int = 0,
                   props: SegmentProperties | None = None) -> SegmentState:
    """Produce an immutable SegmentState with a fixed-seed reservoir sample
    of at most ``n_sample`` points."""
    if props is None:
        props = segment.properties
    rng = sample_seed(base_seed, segment.id, segment.count)
    idx = _reservoir_indices(segment.count, n_sample, rng)
    samples = segment.points[idx].copy()
    samples.setflags(write=False)
    for arr in (props.centroid, props.std, props.bbox, props.bbox_center):
        arr.setflags(write=False)
    return SegmentState(
        id=segment.id,
        count=segment.count,
        centroid=props.centroid,
        std=props.std,
        bbox=props.bbox,
        bbox_center=props.bbox_center,
        length=props.length,
        volume=props.volume,
        samples=samples,
    )
