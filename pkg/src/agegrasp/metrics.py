"""Affordance-map comparison metrics, grasp pixel distance and the training loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .affordance import AffordanceMap
from .errors import ValidationError

KLD_EPS = 1e-12
FOCAL_EPS = 1e-7
NSS_THRESHOLD = 0.1

MapLike = Union[AffordanceMap, np.ndarray]


@dataclass(frozen=True)
class MetricReport:
    kld: float
    sim: float
    nss: float
    pws: Optional[float] = None

    def lines(self) -> list[str]:
        out = [f"kld = {self.kld!r}", f"sim = {self.sim!r}", f"nss = {self.nss!r}"]
        if self.pws is not None:
            out.append(f"pws = {self.pws!r}")
        return out


def _grid(m: MapLike) -> np.ndarray:
    return m.values if isinstance(m, AffordanceMap) else np.asarray(m, dtype=np.float64)


def _pair(pred: MapLike, gt: MapLike) -> tuple[np.ndarray, np.ndarray]:
    p, g = _grid(pred), _grid(gt)
    if p.shape != g.shape:
        raise ValidationError(f"map shapes differ: {p.shape} vs {g.shape}")
    return p, g


def _unit_mass(grid: np.ndarray, name: str) -> np.ndarray:
    total = grid.sum()
    if not total > 0:
        raise ValidationError(f"{name} map has zero mass")
    return grid / total


def kld(pred: MapLike, gt: MapLike) -> float:
    """KL divergence of the ground-truth distribution from the prediction (natural log)."""
    p, g = _pair(pred, gt)
    p, g = _unit_mass(p, "pred"), _unit_mass(g, "gt")
    support = g > 0
    return float(np.sum(g[support] * np.log(g[support] / (p[support] + KLD_EPS))))


def sim(pred: MapLike, gt: MapLike) -> float:
    """Histogram intersection of the two unit-mass maps."""
    p, g = _pair(pred, gt)
    return float(np.sum(np.minimum(_unit_mass(p, "pred"), _unit_mass(g, "gt"))))


def nss(pred: MapLike, gt: MapLike) -> float:
    """Mean standardised prediction over pixels where the ground truth exceeds 0.1.

    Uses the population standard deviation; a constant prediction or an empty
    ground-truth mask scores 0.
    """
    p, g = _pair(pred, gt)
    mask = g > NSS_THRESHOLD
    std = p.std()
    if not mask.any() or std == 0:
        return 0.0
    return float(np.mean((p[mask] - p.mean()) / std))


def pws_distance(grasp_pixel: tuple[float, float], aff: MapLike) -> float:
    """Pixel distance from the grasp to the affordance peak, over the image diagonal."""
    grid = _grid(aff)
    height, width = grid.shape
    row, col = divmod(int(np.argmax(grid)), width)
    dx = float(grasp_pixel[0]) - col
    dy = float(grasp_pixel[1]) - row
    return float(np.hypot(dx, dy) / np.hypot(width, height))


def focal_loss(pred: MapLike, target: MapLike, gamma: float = 2.0) -> float:
    """Mean focal loss for soft targets: ``|t - p|^gamma * BCE(p, t)``."""
    p, t = _pair(pred, target)
    p = np.clip(p, FOCAL_EPS, 1.0 - FOCAL_EPS)
    bce = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    return float(np.mean(np.abs(t - p) ** gamma * bce))


def evaluate(pred: MapLike, gt: MapLike, grasp_pixel: Optional[tuple[float, float]] = None) -> MetricReport:
    pws = None if grasp_pixel is None else pws_distance(grasp_pixel, pred)
    return MetricReport(kld(pred, gt), sim(pred, gt), nss(pred, gt), pws)
