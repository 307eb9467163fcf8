"""Lift an affordance map into a weighted 3D cloud and isolate the dominant region."""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .affordance import AffordanceMap, DepthImage
from .errors import EmptyAffordanceError, ParseError, ValidationError

NOISE = -1

DEFAULT_W_MIN = 0.05
DEFAULT_VOXEL = 0.005
DEFAULT_EPS = 0.010
DEFAULT_MIN_PTS = 10
DEFAULT_TAU = 0.75


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not all(np.isfinite([self.fx, self.fy, self.cx, self.cy])):
            raise ValidationError("intrinsics must be finite")

    def project(self, points: np.ndarray) -> np.ndarray:
        """Pixel coordinates (col, row) of camera-frame points, shape (N, 2)."""
        points = np.atleast_2d(points)
        z = points[:, 2]
        return np.column_stack((self.fx * points[:, 0] / z + self.cx, self.fy * points[:, 1] / z + self.cy))


@dataclass(frozen=True, eq=False)
class WeightedCloud:
    """Points (N, 3) in metres, each with an affordance weight in [0, 1]."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, order="C", copy=True).reshape(-1, 3)
        w = np.array(self.weights, dtype=np.float64, order="C", copy=True).reshape(-1)
        if pos.shape[0] != w.shape[0]:
            raise ValidationError(f"{pos.shape[0]} positions but {w.shape[0]} weights")
        if not np.all(np.isfinite(pos)):
            raise ValidationError("point positions must be finite")
        if w.size and (not np.all(np.isfinite(w)) or w.min() < 0.0 or w.max() > 1.0):
            raise ValidationError("point weights must lie in [0, 1]")
        pos.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __eq__(self, other):
        if not isinstance(other, WeightedCloud):
            return NotImplemented
        return (
            self.positions.shape == other.positions.shape
            and bool(np.array_equal(self.positions, other.positions))
            and bool(np.array_equal(self.weights, other.weights))
        )

    @classmethod
    def empty(cls) -> "WeightedCloud":
        return cls(np.empty((0, 3)), np.empty(0))

    def subset(self, mask_or_index) -> "WeightedCloud":
        return WeightedCloud(self.positions[mask_or_index], self.weights[mask_or_index])


def back_project(
    depth: DepthImage, aff: AffordanceMap, k: CameraIntrinsics, w_min: float = DEFAULT_W_MIN
) -> WeightedCloud:
    """Pinhole back-projection of every pixel with valid depth and weight >= ``w_min``.

    Points are emitted in row-major pixel order.
    """
    if (depth.width, depth.height) != (aff.width, aff.height):
        raise ValidationError(
            f"depth is {depth.width}x{depth.height} but affordance map is {aff.width}x{aff.height}"
        )
    if not 0.0 <= w_min < 1.0:
        raise ValidationError(f"w_min must lie in [0, 1), got {w_min}")
    d = depth.depth
    w = aff.values
    rows, cols = np.nonzero((d > 0.0) & (w >= w_min))
    z = d[rows, cols]
    x = (cols - k.cx) * z / k.fx
    y = (rows - k.cy) * z / k.fy
    return WeightedCloud(np.column_stack((x, y, z)), w[rows, cols])


def voxel_downsample(cloud: WeightedCloud, voxel: float = DEFAULT_VOXEL) -> WeightedCloud:
    """One point per occupied voxel: member centroid and mean weight.

    Output is ordered by voxel index (lexicographic x, y, z).
    """
    if not voxel > 0:
        raise ValidationError(f"voxel size must be positive, got {voxel}")
    if len(cloud) == 0:
        return WeightedCloud.empty()
    pos = cloud.positions
    keys = np.floor(pos / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    m = counts.size
    centroid = np.empty((m, 3))
    for axis in range(3):
        centroid[:, axis] = np.bincount(inverse, weights=pos[:, axis], minlength=m) / counts
        # rounding in the mean can step outside the member range
        lo = np.full(m, np.inf)
        hi = np.full(m, -np.inf)
        np.minimum.at(lo, inverse, pos[:, axis])
        np.maximum.at(hi, inverse, pos[:, axis])
        np.clip(centroid[:, axis], lo, hi, out=centroid[:, axis])
    weight = np.clip(np.bincount(inverse, weights=cloud.weights, minlength=m) / counts, 0.0, 1.0)
    return WeightedCloud(centroid, weight)


def dbscan(cloud: WeightedCloud, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS) -> np.ndarray:
    """Density-based clustering; returns one label per point, ``NOISE`` for outliers.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Cluster ids follow the input order of each cluster's first
    core point; a border point reachable from several clusters joins the one
    with the lowest id.
    """
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    if int(min_pts) != min_pts or min_pts < 1:
        raise ValidationError(f"min_pts must be a positive integer, got {min_pts}")
    n = len(cloud)
    labels = np.full(n, -2, dtype=np.int64)
    if n == 0:
        return labels
    tree = cKDTree(cloud.positions)
    neighbors = tree.query_ball_point(cloud.positions, r=eps)
    is_core = np.fromiter((len(nb) >= min_pts for nb in neighbors), dtype=bool, count=n)

    cluster = 0
    for i in range(n):
        if labels[i] != -2:
            continue
        if not is_core[i]:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        queue = deque(neighbors[i])
        while queue:
            j = queue.popleft()
            if labels[j] == NOISE:
                labels[j] = cluster
            if labels[j] != -2:
                continue
            labels[j] = cluster
            if is_core[j]:
                queue.extend(neighbors[j])
        cluster += 1
    return labels


def cluster_means(cloud: WeightedCloud, labels: np.ndarray) -> np.ndarray:
    """Mean weight of each cluster id 0..K-1 (noise excluded)."""
    member = labels >= 0
    if not np.any(member):
        return np.empty(0)
    k = int(labels[member].max()) + 1
    sums = np.bincount(labels[member], weights=cloud.weights[member], minlength=k)
    counts = np.bincount(labels[member], minlength=k)
    return sums / counts


def filter_clusters(cloud: WeightedCloud, labels: np.ndarray, tau: float = DEFAULT_TAU) -> WeightedCloud:
    """Keep the points of clusters whose mean weight is at least ``tau`` times the best one."""
    labels = np.asarray(labels)
    if labels.shape != (len(cloud),):
        raise ValidationError(f"{labels.size} labels for {len(cloud)} points")
    if not 0.0 < tau <= 1.0:
        raise ValidationError(f"tau must lie in (0, 1], got {tau}")
    means = cluster_means(cloud, labels)
    if means.size == 0:
        raise EmptyAffordanceError("empty affordance: clustering found no cluster, every point is noise")
    best = int(np.argmax(means))
    keep = means >= tau * means[best]
    keep[best] = True
    mask = (labels >= 0) & keep[np.maximum(labels, 0)]
    return cloud.subset(mask)


# ---------------------------------------------------------------------------
# file formats

def read_intrinsics(path) -> CameraIntrinsics:
    """Parse ``key = value`` lines holding fx, fy, cx, cy; ``#`` starts a comment."""
    values: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                values[key] = float(value)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: {key} is not a number: {value!r}") from None
    missing = [key for key in ("fx", "fy", "cx", "cy") if key not in values]
    if missing:
        raise ParseError(f"{path}: missing intrinsics {', '.join(missing)}")
    return CameraIntrinsics(values["fx"], values["fy"], values["cx"], values["cy"])


def write_intrinsics(k: CameraIntrinsics, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in ("fx", "fy", "cx", "cy"):
            fh.write(f"{key} = {getattr(k, key)!r}\n")


def write_ply(cloud: WeightedCloud, path) -> None:
    """ASCII PLY with float properties x, y, z, weight."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "property double weight",
        "end_header",
    ]
    body = [
        f"{x!r} {y!r} {z!r} {w!r}"
        for (x, y, z), w in zip(cloud.positions.tolist(), cloud.weights.tolist())
    ]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines + body) + "\n")


def read_ply(path) -> WeightedCloud:
    """Read an ASCII PLY vertex list; ``weight`` defaults to 1 when absent."""
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read().splitlines()
    if not text or text[0].strip() != "ply":
        raise ParseError(f"{os.fspath(path)}: not a PLY file")
    count = None
    props: list[str] = []
    in_vertex = False
    for i, line in enumerate(text[1:], 1):
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format" and parts[1] != "ascii":
            raise ParseError(f"{os.fspath(path)}: only ASCII PLY is supported")
        if parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            props.append(parts[-1])
        elif parts[0] == "end_header":
            header_end = i + 1
            break
    else:
        raise ParseError(f"{os.fspath(path)}: missing end_header")
    if count is None or not {"x", "y", "z"} <= set(props):
        raise ParseError(f"{os.fspath(path)}: vertex element with x, y, z is required")
    rows = text[header_end:header_end + count]
    if len(rows) < count:
        raise ParseError(f"{os.fspath(path)}: truncated, expected {count} vertices, got {len(rows)}")
    data = np.array([[float(v) for v in row.split()[: len(props)]] for row in rows]).reshape(count, len(props))
    col = {name: idx for idx, name in enumerate(props)}
    pos = data[:, [col["x"], col["y"], col["z"]]]
    weights = data[:, col["weight"]] if "weight" in col else np.ones(count)
    return WeightedCloud(pos, weights)
