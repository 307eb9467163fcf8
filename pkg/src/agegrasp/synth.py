"""Synthetic scenes with known ground truth for validating every stage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affordance import AffordanceMap, DepthImage, gaussian_bump
from .errors import ParseError, ValidationError
from .projection import CameraIntrinsics, WeightedCloud
from .superquadric import SuperquadricParams, format_params, inside_outside_jacobian, parse_params, surface_point

SPLAT_GRID = 512


@dataclass(frozen=True, eq=False)
class SynthScene:
    truth: SuperquadricParams
    anchor: np.ndarray
    anchor_pixel: tuple[int, int]  # (col, row)
    depth: DepthImage
    aff: AffordanceMap
    intrinsics: CameraIntrinsics
    seed: int


def _outward_normals(points: np.ndarray, sq: SuperquadricParams) -> np.ndarray:
    _, jac = inside_outside_jacobian(points, sq.to_vector())
    # dF/dt = -grad_p F
    grad = -jac[:, 5:8]
    norm = np.linalg.norm(grad, axis=1, keepdims=True)
    return grad / np.where(norm > 0, norm, 1.0)


def sample_surface_cloud(sq: SuperquadricParams, n: int, noise: float = 0.0, seed=0) -> WeightedCloud:
    """``n`` surface points at uniformly drawn (eta, omega), jittered along the outward normal."""
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    if noise < 0:
        raise ValidationError(f"noise must be non-negative, got {noise}")
    rng = np.random.default_rng(seed)
    eta = rng.uniform(-np.pi / 2, np.pi / 2, n)
    omega = rng.uniform(-np.pi, np.pi, n)
    pts = surface_point(sq, eta, omega)
    if noise > 0:
        pts = pts + _outward_normals(pts, sq) * rng.normal(0.0, noise, n)[:, None]
    return WeightedCloud(pts, np.ones(n))


def render_scene(
    sq: SuperquadricParams,
    anchor_angles: tuple[float, float],
    k: CameraIntrinsics,
    width: int = 640,
    height: int = 480,
    sigma_px: float = 10.0,
    noise: float = 0.0,
    seed=0,
) -> SynthScene:
    """Z-buffered depth of a superquadric plus an affordance bump at an anchor point."""
    g = np.linspace(0.0, 1.0, SPLAT_GRID)
    eta, omega = np.meshgrid(-np.pi / 2 + np.pi * g, -np.pi + 2 * np.pi * g, indexing="ij")
    pts = surface_point(sq, eta.ravel(), omega.ravel())
    if np.any(pts[:, 2] <= 0):
        raise ValidationError("superquadric must lie entirely in front of the camera (z > 0)")
    pix = np.rint(k.project(pts)).astype(np.int64)
    if pix[:, 0].min() < 0 or pix[:, 0].max() >= width or pix[:, 1].min() < 0 or pix[:, 1].max() >= height:
        raise ValidationError("superquadric projects outside the image frame")

    zbuf = np.full(width * height, np.inf)
    np.minimum.at(zbuf, pix[:, 1] * width + pix[:, 0], pts[:, 2])
    zbuf[~np.isfinite(zbuf)] = 0.0
    zbuf = zbuf.reshape(height, width)
    rng = np.random.default_rng(seed)
    if noise > 0:
        valid = zbuf > 0
        zbuf[valid] = np.maximum(zbuf[valid] + rng.normal(0.0, noise, int(valid.sum())), 1e-6)

    anchor = surface_point(sq, anchor_angles[0], anchor_angles[1])
    col, row = (int(v) for v in np.rint(k.project(anchor)[0]))
    if not (0 <= col < width and 0 <= row < height):
        raise ValidationError("anchor projects outside the image frame")
    aff = gaussian_bump([(col, row)], sigma=sigma_px, width=width, height=height)
    return SynthScene(sq, anchor, (col, row), DepthImage(zbuf), aff, k, seed)


def write_truth(scene: SynthScene, path) -> None:
    """Ground-truth record: the 11 superquadric lines, then the anchor point and pixel."""
    anchor = " ".join(repr(float(v)) for v in scene.anchor)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_params(scene.truth))
        fh.write(f"anchor = {anchor}\n")
        fh.write(f"anchor_pixel = {scene.anchor_pixel[0]} {scene.anchor_pixel[1]}\n")


def read_truth(path) -> tuple[SuperquadricParams, np.ndarray, tuple[int, int]]:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    fields = dict(
        (key.strip(), value.strip())
        for key, _, value in (line.partition("=") for line in text.splitlines() if "=" in line)
    )
    try:
        anchor = np.array([float(v) for v in fields["anchor"].split()])
        col, row = (int(v) for v in fields["anchor_pixel"].split())
    except (KeyError, ValueError) as exc:
        raise ParseError(f"malformed truth record: {exc}") from None
    return parse_params(text, allow_extra=True), anchor, (col, row)
