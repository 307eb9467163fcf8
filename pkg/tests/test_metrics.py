import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agegrasp.affordance import AffordanceMap
from agegrasp.errors import ValidationError
from agegrasp.metrics import MetricReport, evaluate, focal_loss, kld, nss, pws_distance, sim


# ---------------------------------------------------------------------------
# pure-python reference evaluator, written from the metric definitions

def ref_kld(pred, gt):
    p, g = [v for row in pred for v in row], [v for row in gt for v in row]
    sp, sg = math.fsum(p), math.fsum(g)
    return math.fsum((gi / sg) * math.log((gi / sg) / (pi / sp + 1e-12)) for pi, gi in zip(p, g) if gi > 0)


def ref_sim(pred, gt):
    p, g = [v for row in pred for v in row], [v for row in gt for v in row]
    sp, sg = math.fsum(p), math.fsum(g)
    return math.fsum(min(pi / sp, gi / sg) for pi, gi in zip(p, g))


def ref_nss(pred, gt):
    p, g = [v for row in pred for v in row], [v for row in gt for v in row]
    mean = math.fsum(p) / len(p)
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in p) / len(p))
    picked = [(pi - mean) / std for pi, gi in zip(p, g) if gi > 0.1] if std > 0 else []
    return math.fsum(picked) / len(picked) if picked else 0.0


def ref_pws(pixel, grid):
    h, w = len(grid), len(grid[0])
    best, best_rc = -1.0, None
    for r in range(h):
        for c in range(w):
            if grid[r][c] > best:
                best, best_rc = grid[r][c], (r, c)
    r, c = best_rc
    return math.hypot(pixel[0] - c, pixel[1] - r) / math.hypot(w, h)


def ref_focal(pred, target, gamma):
    total, n = [], 0
    for prow, trow in zip(pred, target):
        for p, t in zip(prow, trow):
            p = min(max(p, 1e-7), 1 - 1e-7)
            bce = -(t * math.log(p) + (1 - t) * math.log(1 - p))
            total.append(abs(t - p) ** gamma * bce)
            n += 1
    return math.fsum(total) / n


# ---------------------------------------------------------------------------
# hand-computed examples

def test_kld_examples():
    m = np.array([[0.2, 0.7], [0.1, 0.0]])
    assert kld(m, m) == pytest.approx(0.0, abs=1e-9)
    assert kld(np.array([[0.5, 0.5]]), np.array([[0.75, 0.25]])) == pytest.approx(0.130812, abs=1e-6)
    assert kld(np.array([[0.5, 0.5]]), np.array([[0.75, 0.25]])) == pytest.approx(
        0.75 * math.log(1.5) + 0.25 * math.log(0.5), abs=1e-10)


def test_kld_off_support_is_large():
    value = kld(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert value == pytest.approx(math.log(1e12), rel=1e-9)


def test_sim_examples():
    m = np.array([[0.2, 0.7], [0.1, 0.0]])
    assert sim(m, m) == pytest.approx(1.0, abs=1e-12)
    assert sim(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == 0.0
    assert sim(np.array([[0.5, 0.5]]), np.array([[0.75, 0.25]])) == pytest.approx(0.75, abs=1e-12)


def test_nss_examples():
    assert nss(np.array([[1.0, 3.0]]), np.array([[0.05, 0.9]])) == pytest.approx(1.0, abs=1e-12)
    assert nss(np.full((2, 2), 0.4), np.array([[1.0, 0], [0, 0]])) == 0.0
    assert nss(np.array([[0.1, 0.9]]), np.array([[0.1, 0.05]])) == 0.0


def test_pws_examples():
    grid = np.zeros((480, 640))
    grid[479, 639] = 1.0
    # sqrt(639^2 + 479^2) / 800 = 0.998250...
    assert pws_distance((0, 0), grid) == pytest.approx(math.hypot(639, 479) / 800, abs=1e-12)
    assert pws_distance((0, 0), grid) == pytest.approx(0.998250, abs=1e-6)
    assert pws_distance((639, 479), grid) == 0.0
    ties = np.zeros((10, 10))
    ties[2, 7] = ties[5, 1] = 0.8
    assert pws_distance((7, 2), ties) == 0.0


def test_focal_examples():
    ones = np.ones((3, 3))
    assert focal_loss(ones, ones) == pytest.approx(0.0, abs=1e-12)
    assert focal_loss(np.array([[0.5]]), np.array([[1.0]])) == pytest.approx(0.173287, abs=1e-6)
    assert focal_loss(np.array([[0.5]]), np.array([[1.0]])) == pytest.approx(0.25 * math.log(2), abs=1e-12)
    p, t = np.array([[0.3, 0.8]]), np.array([[0.0, 1.0]])
    bce = -(math.log(0.7) + math.log(0.8)) / 2
    assert focal_loss(p, t, gamma=0) == pytest.approx(bce, abs=1e-12)


def test_metric_errors():
    with pytest.raises(ValidationError):
        kld(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValidationError):
        sim(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        focal_loss(np.ones((2, 2)), np.ones((2, 3)))


def test_evaluate_report():
    pred = AffordanceMap(np.array([[0.1, 0.9], [0.2, 0.3]]))
    report = evaluate(pred, pred, (1, 0))
    assert report.kld == pytest.approx(0.0, abs=1e-9) and report.sim == pytest.approx(1.0)
    assert report.pws == 0.0
    assert [line.split(" = ")[0] for line in report.lines()] == ["kld", "sim", "nss", "pws"]
    assert MetricReport(0.0, 1.0, 0.0).lines()[-1].startswith("nss")


# ---------------------------------------------------------------------------
# brute-force agreement on random pairs

def test_reference_agreement_random_pairs():
    rng = np.random.default_rng(99)
    for _ in range(100):
        h, w = rng.integers(1, 12, 2)
        pred, gt = rng.uniform(0, 1, (h, w)), rng.uniform(0, 1, (h, w))
        gt[rng.uniform(size=(h, w)) < 0.3] = 0.0
        if gt.sum() == 0:
            gt[0, 0] = 0.5
        pl, gl = pred.tolist(), gt.tolist()
        assert abs(kld(pred, gt) - ref_kld(pl, gl)) < 1e-9
        assert abs(sim(pred, gt) - ref_sim(pl, gl)) < 1e-9
        assert abs(nss(pred, gt) - ref_nss(pl, gl)) < 1e-9
        assert abs(focal_loss(pred, gt) - ref_focal(pl, gl, 2.0)) < 1e-9
        pixel = (rng.uniform(0, w - 1), rng.uniform(0, h - 1))
        assert abs(pws_distance(pixel, pred) - ref_pws(pixel, pl)) < 1e-9


# ---------------------------------------------------------------------------
# properties

def positive_maps(shape=(4, 5)):
    return arrays(np.float64, shape, elements=st.floats(0.0, 1.0)).filter(lambda m: m.sum() > 1e-3)


@given(positive_maps(), positive_maps())
def test_kld_non_negative(pred, gt):
    assert kld(pred, gt) >= -1e-9
    assert kld(gt, gt) == pytest.approx(0.0, abs=1e-9)


@given(positive_maps(), st.floats(0.01, 1.0))
def test_kld_zero_for_proportional_maps(m, c):
    assert kld(m * c, m) == pytest.approx(0.0, abs=1e-9)


@given(positive_maps(), positive_maps())
def test_sim_bounded_and_symmetric(pred, gt):
    s = sim(pred, gt)
    assert -1e-12 <= s <= 1 + 1e-12
    assert s == pytest.approx(sim(gt, pred), abs=1e-12)


@given(positive_maps(), positive_maps(), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_kld_sim_rescaling_invariance(pred, gt, a, b):
    assert kld(a * pred, b * gt) == pytest.approx(kld(pred, gt), rel=1e-9, abs=1e-9)
    assert sim(a * pred, b * gt) == pytest.approx(sim(pred, gt), rel=1e-9, abs=1e-12)


@given(arrays(np.float64, (4, 5), elements=st.floats(0.0, 1.0)), positive_maps(), st.floats(0.01, 100), st.floats(-10, 10))
def test_nss_affine_invariance(pred, gt, a, b):
    if pred.std() < 1e-6:
        return
    assert nss(a * pred + b, gt) == pytest.approx(nss(pred, gt), rel=1e-6, abs=1e-6)


@given(positive_maps(), positive_maps(), st.floats(0.0, 5.0))
def test_focal_non_negative(pred, target, gamma):
    assert focal_loss(pred, target, gamma) >= 0.0


@given(positive_maps(), positive_maps())
def test_focal_gamma_zero_is_cross_entropy(pred, target):
    p = np.clip(pred, 1e-7, 1 - 1e-7)
    bce = np.mean(-(target * np.log(p) + (1 - target) * np.log(1 - p)))
    assert abs(focal_loss(pred, target, gamma=0.0) - bce) < 1e-12


@given(positive_maps((6, 9)), st.floats(0, 8.999), st.floats(0, 5.999))
def test_pws_in_unit_interval(aff, col, row):
    assert 0.0 <= pws_distance((col, row), aff) <= 1.0
