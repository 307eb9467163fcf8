import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agegrasp.affordance import AffordanceMap, DepthImage
from agegrasp.errors import EmptyAffordanceError, ParseError, ValidationError
from agegrasp.projection import (
    NOISE,
    CameraIntrinsics,
    WeightedCloud,
    back_project,
    cluster_means,
    dbscan,
    filter_clusters,
    read_intrinsics,
    read_ply,
    voxel_downsample,
    write_intrinsics,
    write_ply,
)

K500 = CameraIntrinsics(500.0, 500.0, 320.0, 240.0)


def reference_dbscan(points, eps, min_pts):
    """Quadratic-time DBSCAN: exhaustive neighbourhoods and union-find over core points."""
    n = len(points)
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    near = d2 <= eps * eps
    core = near.sum(axis=1) >= min_pts
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if core[i] and core[j] and near[i, j]:
                parent[find(i)] = find(j)
    ids = {}
    labels = [NOISE] * n
    for i in range(n):
        if core[i]:
            root = find(i)
            if root not in ids:
                ids[root] = len(ids)
            labels[i] = ids[root]
    for i in range(n):
        if not core[i]:
            reach = [labels[j] for j in range(n) if core[j] and near[i, j]]
            labels[i] = min(reach) if reach else NOISE
    return np.array(labels)


def partition(labels):
    groups = {}
    for i, lab in enumerate(labels):
        if lab != NOISE:
            groups.setdefault(lab, set()).add(i)
    return {frozenset(g) for g in groups.values()}, {i for i, lab in enumerate(labels) if lab == NOISE}


# ---------------------------------------------------------------------------
# back-projection

def test_principal_point_maps_to_axis():
    depth = np.zeros((480, 640))
    aff = np.zeros((480, 640))
    depth[240, 320], aff[240, 320] = 1.0, 0.9
    depth[240, 820 - 640 + 300], aff[240, 480] = 0.0, 0.0
    cloud = back_project(DepthImage(depth), AffordanceMap(aff), K500, w_min=0.05)
    assert len(cloud) == 1
    np.testing.assert_array_equal(cloud.positions[0], [0.0, 0.0, 1.0])
    assert cloud.weights[0] == 0.9


def test_pinhole_offset():
    depth = np.ones((480, 1000))
    aff = np.zeros((480, 1000))
    aff[240, 820] = 1.0
    cloud = back_project(DepthImage(depth), AffordanceMap(aff), K500, w_min=0.5)
    np.testing.assert_allclose(cloud.positions, [[1.0, 0.0, 1.0]])


def test_missing_depth_and_gate():
    depth = np.array([[0.0, 1.0, 1.0]])
    aff = np.array([[1.0, 0.04, 0.05]])
    cloud = back_project(DepthImage(depth), AffordanceMap(aff), K500, w_min=0.05)
    assert len(cloud) == 1 and cloud.weights[0] == 0.05


def test_row_major_order():
    depth = np.ones((2, 2))
    aff = np.array([[0.1, 0.2], [0.3, 0.4]])
    cloud = back_project(DepthImage(depth), AffordanceMap(aff), K500, w_min=0.0)
    np.testing.assert_array_equal(cloud.weights, [0.1, 0.2, 0.3, 0.4])


def test_dimension_mismatch():
    with pytest.raises(ValidationError):
        back_project(DepthImage(np.ones((2, 3))), AffordanceMap(np.ones((3, 2))), K500)


@given(
    arrays(np.float64, (6, 7), elements=st.one_of(st.just(0.0), st.floats(1e-3, 5.0))),
    arrays(np.float64, (6, 7), elements=st.floats(0.0, 1.0)),
    st.floats(50, 900),
    st.floats(50, 900),
    st.floats(-5, 10),
    st.floats(-5, 10),
)
def test_back_projection_reprojects_to_pixel(depth, aff, fx, fy, cx, cy):
    k = CameraIntrinsics(fx, fy, cx, cy)
    cloud = back_project(DepthImage(depth), AffordanceMap(aff), k, w_min=0.2)
    rows, cols = np.nonzero((depth > 0) & (aff >= 0.2))
    assert len(cloud) == rows.size
    if rows.size:
        pix = k.project(cloud.positions)
        assert np.max(np.abs(pix - np.column_stack((cols, rows)))) < 1e-9
        np.testing.assert_array_equal(cloud.positions[:, 2], depth[rows, cols])


# ---------------------------------------------------------------------------
# voxel downsampling

def test_voxel_merges_pair():
    cloud = WeightedCloud([[0, 0, 0], [0.004, 0, 0]], [1.0, 0.5])
    out = voxel_downsample(cloud, 0.005)
    assert len(out) == 1
    np.testing.assert_allclose(out.positions[0], [0.002, 0, 0])
    assert out.weights[0] == 0.75


def test_voxel_keeps_distant():
    cloud = WeightedCloud([[0, 0, 0], [1.0, 0, 0]], [1.0, 0.5])
    assert len(voxel_downsample(cloud, 0.005)) == 2


def test_voxel_empty_and_invalid():
    assert len(voxel_downsample(WeightedCloud.empty(), 0.005)) == 0
    with pytest.raises(ValidationError):
        voxel_downsample(WeightedCloud.empty(), 0.0)


clouds = st.integers(1, 60).flatmap(
    lambda n: st.tuples(
        arrays(np.float64, (n, 3), elements=st.floats(-0.05, 0.05)),
        arrays(np.float64, (n,), elements=st.floats(0.0, 1.0)),
    )
)


@given(clouds, st.floats(0.001, 0.05))
def test_voxel_centroid_in_member_box(data, voxel):
    pos, w = data
    out = voxel_downsample(WeightedCloud(pos, w), voxel)
    assert len(out) <= len(pos)
    keys = np.floor(pos / voxel).astype(np.int64)
    out_keys = np.floor(out.positions / voxel).astype(np.int64)
    assert len({tuple(k) for k in keys}) == len(out)
    for centroid, weight in zip(out.positions, out.weights):
        # find the voxel whose members bound this centroid
        members = [np.all(keys == k, axis=1) for k in {tuple(k) for k in keys}]
        match = [m for m in members if np.all(pos[m].min(axis=0) <= centroid) and np.all(centroid <= pos[m].max(axis=0))
                 and np.isclose(w[m].mean(), weight, rtol=0, atol=1e-12)]
        assert match
    assert out_keys.shape == (len(out), 3)


# ---------------------------------------------------------------------------
# dbscan

def test_dbscan_two_blobs():
    pts = np.vstack((np.zeros((5, 3)), np.tile([10.0, 0, 0], (5, 1))))
    labels = dbscan(WeightedCloud(pts, np.ones(10)), eps=1.0, min_pts=3)
    assert labels.tolist() == [0] * 5 + [1] * 5


def test_dbscan_isolated_noise():
    labels = dbscan(WeightedCloud([[0, 0, 0]], [1.0]), eps=1.0, min_pts=2)
    assert labels.tolist() == [NOISE]


def test_dbscan_min_pts_one_counts_self():
    labels = dbscan(WeightedCloud([[0, 0, 0], [5, 0, 0]], [1.0, 1.0]), eps=1.0, min_pts=1)
    assert labels.tolist() == [0, 1]


def test_dbscan_border_joins_lowest_cluster():
    # cores at 0 and 2, each with private neighbours; the border point at 1 reaches both
    x = [0.0, -0.5, -0.9, 1.0, 2.0, 2.5, 2.9]
    pts = np.column_stack((x, np.zeros(7), np.zeros(7)))
    labels = dbscan(WeightedCloud(pts, np.ones(7)), eps=1.0, min_pts=4)
    assert labels.tolist() == [0, 0, 0, 0, 1, 1, 1]
    # reversed input: the cluster around x=2 now comes first and claims the border point
    labels = dbscan(WeightedCloud(pts[::-1], np.ones(7)), eps=1.0, min_pts=4)
    assert labels.tolist() == [0, 0, 0, 0, 1, 1, 1]
    np.testing.assert_array_equal(labels, reference_dbscan(pts[::-1], 1.0, 4))


def test_dbscan_matches_reference_unit_cube(rng):
    pts = rng.uniform(0, 1, (200, 3))
    labels = dbscan(WeightedCloud(pts, np.ones(200)), eps=0.1, min_pts=5)
    ref = reference_dbscan(pts, 0.1, 5)
    assert partition(labels) == partition(ref)
    np.testing.assert_array_equal(labels, ref)


def test_dbscan_rejects_bad_parameters():
    cloud = WeightedCloud([[0, 0, 0]], [1.0])
    with pytest.raises(ValidationError):
        dbscan(cloud, eps=0.0, min_pts=3)
    with pytest.raises(ValidationError):
        dbscan(cloud, eps=1.0, min_pts=0)


@given(st.integers(0, 2**32 - 1), st.integers(2, 60), st.floats(0.05, 0.4), st.integers(1, 6))
def test_dbscan_matches_reference(seed, n, eps, min_pts):
    pts = np.random.default_rng(seed).uniform(0, 1, (n, 3))
    labels = dbscan(WeightedCloud(pts, np.ones(n)), eps=eps, min_pts=min_pts)
    np.testing.assert_array_equal(labels, reference_dbscan(pts, eps, min_pts))


@given(st.integers(0, 2**32 - 1), st.integers(2, 80), st.floats(0.1, 0.3), st.integers(2, 6))
def test_dbscan_permutation_invariant(seed, n, eps, min_pts):
    rng = np.random.default_rng(seed)
    # well-separated blobs make every border point unambiguous
    centers = rng.uniform(0, 10, (3, 3))
    pts = centers[rng.integers(0, 3, n)] + rng.normal(0, 0.1, (n, 3))
    perm = rng.permutation(n)
    a = dbscan(WeightedCloud(pts, np.ones(n)), eps=eps, min_pts=min_pts)
    b = dbscan(WeightedCloud(pts[perm], np.ones(n)), eps=eps, min_pts=min_pts)
    core = np.array([np.sum(np.linalg.norm(pts - p, axis=1) <= eps) >= min_pts for p in pts])
    ambiguous = set()
    for i in np.nonzero(~core)[0]:
        near = np.nonzero(core & (np.linalg.norm(pts - pts[i], axis=1) <= eps))[0]
        if len({a[j] for j in near}) > 1:
            ambiguous.add(i)
    unpermuted = np.empty(n, dtype=np.int64)
    unpermuted[perm] = b
    keep = [i for i in range(n) if i not in ambiguous]
    assert partition(a[keep]) == partition(unpermuted[keep])


# ---------------------------------------------------------------------------
# cluster filtering

def _two_clusters(w0, w1):
    pts = np.zeros((4, 3))
    return WeightedCloud(pts, [w0, w0, w1, w1]), np.array([0, 0, 1, 1])


def test_filter_drops_weak_cluster():
    cloud, labels = _two_clusters(0.9, 0.2)
    out = filter_clusters(cloud, labels, 0.75)
    np.testing.assert_array_equal(out.weights, [0.9, 0.9])


def test_filter_keeps_close_clusters():
    cloud, labels = _two_clusters(0.8, 0.78)
    assert len(filter_clusters(cloud, labels, 0.75)) == 4


def test_filter_single_cluster_always_kept():
    cloud = WeightedCloud(np.zeros((3, 3)), [0.01, 0.02, 0.03])
    assert len(filter_clusters(cloud, np.array([0, 0, NOISE]), 1.0)) == 2


def test_filter_all_noise():
    cloud = WeightedCloud(np.zeros((2, 3)), [0.5, 0.5])
    with pytest.raises(EmptyAffordanceError, match="empty affordance"):
        filter_clusters(cloud, np.array([NOISE, NOISE]), 0.75)


@given(
    st.lists(st.integers(-1, 4), min_size=1, max_size=40),
    st.floats(0.01, 1.0),
    st.integers(0, 2**32 - 1),
)
def test_filter_kept_means_above_threshold(raw_labels, tau, seed):
    labels = np.array(raw_labels)
    if not np.any(labels >= 0):
        labels[0] = 0
    # make ids contiguous
    ids = {lab: i for i, lab in enumerate(sorted(set(labels[labels >= 0])))}
    labels = np.array([ids.get(lab, NOISE) for lab in labels])
    w = np.random.default_rng(seed).uniform(0, 1, labels.size)
    cloud = WeightedCloud(np.zeros((labels.size, 3)), w)
    means = cluster_means(cloud, labels)
    out = filter_clusters(cloud, labels, tau)
    kept = [c for c in range(means.size) if means[c] >= tau * means.max()]
    assert min(means[kept]) >= tau * means.max()
    assert len(out) == int(np.isin(labels, kept).sum())


# ---------------------------------------------------------------------------
# files

def test_intrinsics_round_trip(tmp_path):
    k = CameraIntrinsics(525.0, 524.5, 319.5, 239.25)
    write_intrinsics(k, tmp_path / "k.txt")
    assert read_intrinsics(tmp_path / "k.txt") == k


def test_intrinsics_errors(tmp_path):
    path = tmp_path / "k.txt"
    path.write_text("fx = 500\nfy = 500\ncx = 1\n")
    with pytest.raises(ParseError, match="cy"):
        read_intrinsics(path)
    path.write_text("fx = 500 # focal\nfy = abc\n")
    with pytest.raises(ParseError):
        read_intrinsics(path)


def test_ply_round_trip(tmp_path, rng):
    cloud = WeightedCloud(rng.normal(size=(20, 3)), rng.uniform(size=20))
    write_ply(cloud, tmp_path / "c.ply")
    text = (tmp_path / "c.ply").read_text()
    assert "property double weight" in text
    assert read_ply(tmp_path / "c.ply") == cloud


def test_ply_without_weight(tmp_path):
    path = tmp_path / "c.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                    "property float z\nend_header\n1 2 3\n")
    cloud = read_ply(path)
    np.testing.assert_array_equal(cloud.positions, [[1, 2, 3]])
    assert cloud.weights.tolist() == [1.0]
