"""Grasp-pose search: align the near half of a gripper ellipsoid with a superquadric.

The gripper is an ellipsoid with semi-axes ``g = (g1, g2, g3)`` in its own
frame; by convention its z axis is the approach direction and y the long
(finger-span) axis. Poses are 7-vectors ``[x, y, z, qx, qy, qz, qw]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import ValidationError
from scipy.optimize import minimize

from .optim import least_squares_descent
from .superquadric import RecoveryConfig, SuperquadricParams, inside_outside

DEFAULT_GRIPPER_AXES = (0.03, 0.06, 0.03)
DEFAULT_SAMPLES = 20
PENALTY_START = 10.0
PENALTY_GROWTH = 10.0
PENALTY_ROUNDS = 5
# constraints are pushed this far past zero so the exterior penalty lands strictly inside
TABLE_SAFETY = 1e-3  # metres
OBSTACLE_SAFETY = 1e-2  # inside-outside units
TARGET_SAFETY = 1e-2  # inside-outside units, for the gripper centre against the target
# final costs this close (relative) count as equal, so symmetric twins fall back to start order
COST_TIE = 1e-6


@dataclass(frozen=True)
class GripperModel:
    axes: tuple[float, float, float] = DEFAULT_GRIPPER_AXES
    samples: int = DEFAULT_SAMPLES

    def __post_init__(self):
        axes = tuple(float(v) for v in self.axes)
        if len(axes) != 3 or min(axes) <= 0:
            raise ValidationError(f"gripper semi-axes must be three positive lengths, got {self.axes}")
        if self.samples < 6:
            raise ValidationError(f"gripper sample count must be at least 6, got {self.samples}")
        object.__setattr__(self, "axes", axes)


@dataclass(frozen=True, eq=False)
class GraspPose:
    position: np.ndarray
    quaternion: np.ndarray  # (x, y, z, w)

    def __post_init__(self):
        p = np.array(self.position, dtype=np.float64).reshape(3)
        q = np.array(self.quaternion, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(p)) or not np.all(np.isfinite(q)):
            raise ValidationError("pose must be finite")
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValidationError(f"quaternion must have unit norm, got |q| = {np.linalg.norm(q)}")
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "quaternion", q)

    @classmethod
    def from_vector(cls, x) -> "GraspPose":
        x = np.asarray(x, dtype=np.float64)
        return cls(x[:3], x[3:] / np.linalg.norm(x[3:]))

    @classmethod
    def from_matrix(cls, position, rotation) -> "GraspPose":
        return cls(position, quaternion_from_matrix(rotation))

    def to_vector(self) -> np.ndarray:
        return np.concatenate((self.position, self.quaternion))

    @property
    def rotation(self) -> np.ndarray:
        return quaternion_matrix(self.quaternion)


@dataclass(frozen=True)
class SceneConstraints:
    table_height: float = -np.inf
    clearance: float = 0.0
    obstacles: Sequence[SuperquadricParams] = ()

    def __post_init__(self):
        if self.clearance < 0:
            raise ValidationError(f"clearance must be non-negative, got {self.clearance}")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))


@dataclass
class GraspResult:
    pose: GraspPose
    final_cost: float
    residuals: np.ndarray  # |F - 1| at each sampled gripper point
    margins: list[float]
    converged: bool
    feasible: bool
    start_index: int
    target_margin: float = float("inf")  # F(gripper centre, target) - 1
    initial_cost: float = float("nan")
    starts: list = field(default_factory=list, repr=False)

    @property
    def mean_residual(self) -> float:
        return float(np.mean(self.residuals))


# ---------------------------------------------------------------------------
# rotations

def quaternion_matrix(q) -> np.ndarray:
    x, y, z, w = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _quaternion_basis() -> np.ndarray:
    # rotation entries as linear combinations of the 16 products q_i q_j (x, y, z, w order)
    C = np.zeros((4, 4, 9))
    x, y, z, w = range(4)
    for entry, terms in enumerate([
        [(w, w, 1), (x, x, 1), (y, y, -1), (z, z, -1)],
        [(x, y, 2), (z, w, -2)],
        [(x, z, 2), (y, w, 2)],
        [(x, y, 2), (z, w, 2)],
        [(w, w, 1), (x, x, -1), (y, y, 1), (z, z, -1)],
        [(y, z, 2), (x, w, -2)],
        [(x, z, 2), (y, w, -2)],
        [(y, z, 2), (x, w, 2)],
        [(w, w, 1), (x, x, -1), (y, y, -1), (z, z, 1)],
    ]):
        for i, j, c in terms:
            C[i, j, entry] += c
    return C.reshape(16, 9)


_QUAT_BASIS = _quaternion_basis()


def _quaternion_matrices(q: np.ndarray) -> np.ndarray:
    q = q / np.sqrt(np.sum(q * q, axis=1))[:, None]
    return ((q[:, :, None] * q[:, None, :]).reshape(-1, 16) @ _QUAT_BASIS).reshape(-1, 3, 3)


def quaternion_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) with w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s])
    q /= np.linalg.norm(q)
    return -q if q[3] < 0 else q


# ---------------------------------------------------------------------------
# sampling

@lru_cache(maxsize=16)
def _fibonacci_hemisphere(n: int) -> np.ndarray:
    """``n`` unit vectors spread over the z > 0 hemisphere along a golden-angle spiral."""
    k = np.arange(n) + 0.5
    z = k / n
    r = np.sqrt(1.0 - z * z)
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    pts = np.column_stack((r * np.cos(phi), r * np.sin(phi), z))
    pts.setflags(write=False)
    return pts


# pole rotation entries from the features (1, a, b, c, a^2 k, ab k, b^2 k), k = 1 / (1 + c)
_POLE_BASIS = np.array([
    [1, 0, 0, 0, 1, 0, 0, 0, 0],
    [0, 0, 1, 0, 0, 0, -1, 0, 0],
    [0, 0, 0, 0, 0, 1, 0, -1, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 1],
    [-1, 0, 0, 0, 0, 0, 0, 0, 0],
    [0, -1, 0, -1, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, -1, 0, 0, 0, 0],
], dtype=np.float64)


def _pole_rotations(n: np.ndarray) -> np.ndarray:
    """Batched minimal rotations taking +z onto each unit vector in ``n``."""
    c = n[:, 2]
    flipped = c < -1.0 + 1e-12
    k = 1.0 / np.where(flipped, 1.0, 1.0 + c)
    feats = np.empty((n.shape[0], 7))
    feats[:, 0] = 1.0
    feats[:, 1:4] = n
    ak = n[:, 0] * k
    feats[:, 4] = n[:, 0] * ak
    feats[:, 5] = n[:, 1] * ak
    feats[:, 6] = n[:, 1] * n[:, 1] * k
    out = (feats @ _POLE_BASIS).reshape(-1, 3, 3)
    if flipped.any():
        out[flipped] = np.diag([1.0, -1.0, -1.0])
    return out


def _half_points(model: GripperModel, x: np.ndarray, target_center: np.ndarray) -> np.ndarray:
    """Gripper points for a batch of 7-vector poses, shape (B, L, 3)."""
    x = np.atleast_2d(x)
    g = np.asarray(model.axes)
    R = _quaternion_matrices(x[:, 3:])
    d_local = ((target_center - x[:, :3])[:, None, :] @ R)[:, 0, :]
    n = g * d_local
    norm = np.sqrt(np.sum(n * n, axis=1))
    if norm.all():
        n /= norm[:, None]
    else:
        # gripper centre on the target centre: face along the approach axis
        n[norm == 0] = (0.0, 0.0, 1.0)
        n /= np.sqrt(np.sum(n * n, axis=1))[:, None]
    # fold the gripper scaling into the rotation: world = R diag(g) P u + x
    M = (R * g) @ _pole_rotations(n)
    return _fibonacci_hemisphere(model.samples) @ M.transpose(0, 2, 1) + x[:, None, :3]


def sample_gripper_half(model: GripperModel, pose: GraspPose, target_center) -> np.ndarray:
    """``L`` points on the half of the gripper ellipsoid that faces ``target_center``.

    Points come from a fixed golden-angle spiral on the unit hemisphere whose
    pole is the facing direction, so every returned point satisfies
    ``(p - c_g) . (target - c_g) >= 0``. World-frame array of shape (L, 3).
    """
    target = np.asarray(target_center, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(target)):
        raise ValidationError("target centre must be finite")
    return _half_points(model, pose.to_vector(), target)[0]


# ---------------------------------------------------------------------------
# cost and constraints

def grasp_cost(points, sq: SuperquadricParams) -> float:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[0] == 0:
        raise ValidationError("grasp cost needs at least one point")
    r = inside_outside(pts, sq) - 1.0
    return float(r @ r)


def constraint_margins(points, constraints: SceneConstraints) -> list[float]:
    """Table margin first, then one inside-outside margin per obstacle; feasible iff all > 0."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[0] == 0:
        raise ValidationError("constraint margins need at least one point")
    margins = [float(np.min(pts[:, 2] - constraints.table_height - constraints.clearance))]
    for obstacle in constraints.obstacles:
        margins.append(float(np.min(inside_outside(pts, obstacle) - 1.0)))
    return margins


def _penalty_terms(pts: np.ndarray, constraints: SceneConstraints, scale: float) -> np.ndarray:
    """Exterior penalty residuals for points of shape (B, L, 3), returned as (B, L * (1 + obstacles))."""
    B, L, _ = pts.shape
    height = pts[..., 2] - constraints.table_height - constraints.clearance
    terms = [np.maximum(0.0, TABLE_SAFETY - height) / scale]
    flat = pts.reshape(-1, 3)
    for obstacle in constraints.obstacles:
        margin = inside_outside(flat, obstacle).reshape(B, L) - 1.0
        terms.append(np.maximum(0.0, OBSTACLE_SAFETY - margin))
    return np.concatenate(terms, axis=1)


def initial_poses(sq: SuperquadricParams, model: GripperModel) -> list[GraspPose]:
    """Six approaches along +/- each superquadric axis, gripper z pointing at the centre."""
    R = sq.rotation
    reach = max(model.axes)
    poses = []
    for k in range(3):
        for sign in (1.0, -1.0):
            axis = R[:, k]
            position = sq.t + sign * (sq.a[k] + reach) * axis
            z = -sign * axis
            y = R[:, (k + 1) % 3]
            x = np.cross(y, z)
            poses.append(GraspPose.from_matrix(position, np.column_stack((x, y, z))))
    return poses


# ---------------------------------------------------------------------------
# optimisation

def target_margin(pose: GraspPose, sq: SuperquadricParams) -> float:
    """How far outside the target the gripper centre sits, in inside-outside units."""
    return float(inside_outside(pose.position, sq)) - 1.0


def _project_pose(x: np.ndarray) -> np.ndarray:
    out = x.copy()
    out[3:] /= np.linalg.norm(out[3:])
    return out


def _evaluate(x, sq, model, constraints):
    pts = _half_points(model, x, sq.t)[0]
    r = inside_outside(pts, sq) - 1.0
    margins = constraint_margins(pts, constraints)
    return pts, r, margins, float(inside_outside(x[:3], sq)) - 1.0


def _violation(margins: list[float], centre_margin: float) -> float:
    return max(0.0, -min(min(margins), centre_margin))


def _io_function(sq: SuperquadricParams):
    """Inside-outside function of a fixed superquadric, with its constants hoisted out."""
    R, t = sq.rotation, sq.t
    inv_a = 1.0 / sq.a
    p12, p3, outer = 2.0 / sq.e2, 2.0 / sq.e1, sq.e2 / sq.e1

    def F(points):
        s = np.abs((points - t) @ R * inv_a)
        return (s[:, 0] ** p12 + s[:, 1] ** p12) ** outer + s[:, 2] ** p3

    return F


def _polish(residuals, jacobian, x):
    """Quasi-Newton refinement of a descent result on the same least-squares cost.

    Gauss-Newton converges only linearly on this large-residual problem, and the
    cost is nearly flat under spin about the gripper's long axis; BFGS picks up
    the curvature the Gauss-Newton model misses.
    """
    def cost(y):
        r = residuals(_project_pose(y))
        return float(r @ r)

    def grad(y):
        q = y[3:]
        n = np.linalg.norm(q)
        yp = _project_pose(y)
        r = residuals(yp)
        g = 2.0 * (jacobian(yp, r).T @ r)
        # chain rule through the quaternion normalisation
        g[3:] = (g[3:] - q * (q @ g[3:]) / (n * n)) / n
        return g

    start = cost(x)
    out = minimize(cost, x, jac=grad, method="BFGS", options={"gtol": 1e-9, "maxiter": 50})
    return _project_pose(out.x) if out.fun < start else x


def _optimise_start(x0, sq, model, constraints, config: RecoveryConfig):
    scale = max(model.axes)
    step = 1e-7
    io = _io_function(sq)

    def make_residuals(mu):
        root = np.sqrt(mu)

        def batch(xs):
            pts = _half_points(model, xs, sq.t)
            B, L, _ = pts.shape
            flat = pts.reshape(-1, 3)
            align = (io(flat) - 1.0).reshape(B, L)
            centre = np.maximum(0.0, TARGET_SAFETY - (io(xs[:, :3]) - 1.0))[:, None]
            return np.concatenate((align, root * _penalty_terms(pts, constraints, scale), root * centre), axis=1)

        def residuals(x):
            return batch(x[None])[0]

        def jacobian(x, r):
            xs = np.repeat(x[None], x.size, axis=0)
            h = step * np.maximum(1.0, np.abs(x))
            xs[np.arange(x.size), np.arange(x.size)] += h
            return ((batch(xs) - r[None]) / h[:, None]).T

        return residuals, jacobian

    def strictly_feasible(x):
        _, _, margins, centre = _evaluate(x, sq, model, constraints)
        return min(margins) > 0 and centre > 0

    x = _project_pose(np.asarray(x0, dtype=np.float64))
    candidates = [x]
    converged = True
    mu = PENALTY_START
    for round_index in range(PENALTY_ROUNDS):
        residuals, jacobian = make_residuals(mu)
        if candidates[1:] and strictly_feasible(x):
            # larger multipliers only push a feasible iterate deeper into the
            # safety band, trading alignment for margin
            break
        result = least_squares_descent(
            residuals,
            x,
            jacobian=jacobian,
            project=_project_pose,
            max_iterations=config.max_iterations,
            tolerance=config.tolerance,
            scaled=False,
        )
        x = result.x
        if round_index == PENALTY_ROUNDS - 1 or strictly_feasible(x):
            # only the round that ends the schedule needs a converged answer
            x = _polish(residuals, jacobian, x)
        converged = result.converged
        candidates.append(x)
        mu *= PENALTY_GROWTH

    # best iterate over the start and every round, so a feasible start is never made worse
    best_key, best_x = None, x
    for idx, cand in enumerate(candidates):
        _, r, margins, centre = _evaluate(cand, sq, model, constraints)
        feasible = min(margins) > 0 and centre > 0
        key = (not feasible, 0.0 if feasible else _violation(margins, centre), float(r @ r), -idx)
        if best_key is None or key < best_key:
            best_key, best_x = key, cand
    return best_x, converged


def _first_of_cheapest(results: list[GraspResult]) -> GraspResult:
    cheapest = min(o.final_cost for o in results)
    return min((o for o in results if o.final_cost <= cheapest * (1.0 + COST_TIE)), key=lambda o: o.start_index)


def plan_grasp(
    sq: SuperquadricParams,
    model: GripperModel = GripperModel(),
    constraints: SceneConstraints = SceneConstraints(),
    config: RecoveryConfig = RecoveryConfig(),
) -> GraspResult:
    """Multi-start constrained alignment of the gripper's near half with ``sq``.

    Each of the six starts runs an exterior quadratic penalty schedule (five
    rounds, multiplier x10 per round) around local descent. Besides the table
    and obstacles, the gripper centre must stay outside the target itself.
    Among the results, feasible ones win, then lower alignment cost (equal to
    within ``COST_TIE``), then lower start index; with no feasible start the
    least-violating one is returned as not converged.
    """
    outcomes = []
    for index, start in enumerate(initial_poses(sq, model)):
        x0 = start.to_vector()
        _, r0, _, _ = _evaluate(x0, sq, model, constraints)
        x, converged = _optimise_start(x0, sq, model, constraints, config)
        pts, r, margins, centre = _evaluate(x, sq, model, constraints)
        feasible = min(margins) > 0 and centre > 0
        outcomes.append(
            GraspResult(
                pose=GraspPose.from_vector(x),
                final_cost=float(r @ r),
                residuals=np.abs(r),
                margins=margins,
                converged=bool(converged and feasible),
                feasible=feasible,
                start_index=index,
                target_margin=centre,
                initial_cost=float(r0 @ r0),
            )
        )
    feasible = [o for o in outcomes if o.feasible]
    if feasible:
        winner = _first_of_cheapest(feasible)
    else:
        least = min(_violation(o.margins, o.target_margin) for o in outcomes)
        winner = _first_of_cheapest([o for o in outcomes if _violation(o.margins, o.target_margin) == least])
    winner.starts = outcomes
    return winner
