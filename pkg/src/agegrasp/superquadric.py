"""Superquadric geometry and affordance-weighted superquadric recovery.

A superquadric is described by 11 scalars, stored in this order::

    a1 a2 a3   semi-axes (m)
    e1 e2      shape exponents, e1 latitudinal and e2 longitudinal
    tx ty tz   centre (m)
    rz ry rx   ZYX Euler angles (rad), R = Rz(rz) @ Ry(ry) @ Rx(rx)

``R`` maps the superquadric's canonical frame to the world frame, so a world
point ``p`` has canonical coordinates ``R.T @ (p - t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import digamma

from .errors import ParseError, ValidationError
from .optim import least_squares_descent
from .projection import WeightedCloud

E_MIN, E_MAX = 0.1, 1.9
A_MIN = 1e-3
PARAM_NAMES = ("a1", "a2", "a3", "e1", "e2", "tx", "ty", "tz", "rz", "ry", "rx")


@dataclass(frozen=True, eq=False)
class SuperquadricParams:
    a: np.ndarray
    e1: float
    e2: float
    t: np.ndarray
    euler: np.ndarray  # (rz, ry, rx)

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64).reshape(3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        euler = np.array(self.euler, dtype=np.float64).reshape(3)
        if not np.all(a > 0) or not np.all(np.isfinite(a)):
            raise ValidationError(f"semi-axes must be positive, got {a}")
        for name in ("e1", "e2"):
            value = float(getattr(self, name))
            if not E_MIN - 1e-12 <= value <= E_MAX + 1e-12:
                raise ValidationError(f"{name} must lie in [{E_MIN}, {E_MAX}], got {value}")
            object.__setattr__(self, name, value)
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(euler)):
            raise ValidationError("translation and Euler angles must be finite")
        for arr in (a, t, euler):
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "euler", euler)

    @classmethod
    def from_vector(cls, vec) -> "SuperquadricParams":
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != (11,):
            raise ValidationError(f"expected 11 parameters, got shape {v.shape}")
        return cls(v[0:3], v[3], v[4], v[5:8], v[8:11])

    def to_vector(self) -> np.ndarray:
        return np.concatenate((self.a, [self.e1, self.e2], self.t, self.euler))

    @property
    def rotation(self) -> np.ndarray:
        return rotation_zyx(*self.euler)

    def __eq__(self, other):
        if not isinstance(other, SuperquadricParams):
            return NotImplemented
        return bool(np.array_equal(self.to_vector(), other.to_vector()))

    def __repr__(self):
        body = ", ".join(f"{n}={v:.6g}" for n, v in zip(PARAM_NAMES, self.to_vector()))
        return f"SuperquadricParams({body})"


@dataclass(frozen=True)
class RecoveryConfig:
    beta: float = 0.1
    max_iterations: int = 200
    tolerance: float = 1e-8
    e_bounds: tuple[float, float] = (E_MIN, E_MAX)
    a_min: float = A_MIN

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError(f"beta must be non-negative, got {self.beta}")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1")
        if not self.tolerance > 0:
            raise ValidationError("tolerance must be positive")
        lo, hi = self.e_bounds
        if not E_MIN <= lo < hi <= E_MAX:
            raise ValidationError(f"exponent bounds must lie inside [{E_MIN}, {E_MAX}]")


@dataclass
class FitResult:
    params: SuperquadricParams
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    init: SuperquadricParams = field(repr=False)


# ---------------------------------------------------------------------------
# rotations

def rotation_zyx(rz: float, ry: float, rx: float) -> np.ndarray:
    cz, sz = np.cos(rz), np.sin(rz)
    cy, sy = np.cos(ry), np.sin(ry)
    cx, sx = np.cos(rx), np.sin(rx)
    return np.array([
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ])


def _rotation_zyx_partials(rz: float, ry: float, rx: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cz, sz = np.cos(rz), np.sin(rz)
    cy, sy = np.cos(ry), np.sin(ry)
    cx, sx = np.cos(rx), np.sin(rx)
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1.0]])
    Ry = np.array([[cy, 0, sy], [0, 1.0, 0], [-sy, 0, cy]])
    Rx = np.array([[1.0, 0, 0], [0, cx, -sx], [0, sx, cx]])
    dRz = np.array([[-sz, -cz, 0], [cz, -sz, 0], [0, 0, 0.0]])
    dRy = np.array([[-sy, 0, cy], [0, 0, 0.0], [-cy, 0, -sy]])
    dRx = np.array([[0.0, 0, 0], [0, -sx, -cx], [0, cx, -sx]])
    return dRz @ Ry @ Rx, Rz @ dRy @ Rx, Rz @ Ry @ dRx


def euler_zyx_from_matrix(R: np.ndarray) -> np.ndarray:
    """(rz, ry, rx) with ry in [-pi/2, pi/2]."""
    sy = float(np.clip(-R[2, 0], -1.0, 1.0))
    ry = np.arcsin(sy)
    if abs(sy) < 1.0 - 1e-12:
        rz = np.arctan2(R[1, 0], R[0, 0])
        rx = np.arctan2(R[2, 1], R[2, 2])
    else:
        rx = 0.0
        rz = np.arctan2(-R[0, 1], R[1, 1])
    return np.array([rz, ry, rx])


# ---------------------------------------------------------------------------
# geometry

def _signed_pow(x, e):
    return np.sign(x) * np.abs(x) ** e


def _canonical(points: np.ndarray, vec: np.ndarray) -> np.ndarray:
    R = rotation_zyx(*vec[8:11])
    return (points - vec[5:8]) @ R


def _io_terms(local: np.ndarray, a: np.ndarray, e1: float, e2: float):
    """Pieces of the inside-outside function shared by value and derivatives."""
    scaled = np.abs(local / a)
    nz = scaled > 0
    log_s = np.log(np.where(nz, scaled, 1.0))
    powers = np.where(nz, np.exp(log_s * np.array([2.0 / e2, 2.0 / e2, 2.0 / e1])), 0.0)
    A = powers[:, 0] + powers[:, 1]
    pos_a = A > 0
    log_A = np.log(np.where(pos_a, A, 1.0))
    G = np.where(pos_a, np.exp(log_A * (e2 / e1)), 0.0)
    F = G + powers[:, 2]
    return scaled, nz, log_s, powers, A, pos_a, log_A, G, F


def inside_outside(points, sq: SuperquadricParams):
    """Inside-outside function F: < 1 inside, 1 on the surface, > 1 outside.

    Accepts a single 3-vector (returns a float) or an (N, 3) array.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    local = _canonical(np.atleast_2d(pts), sq.to_vector())
    F = _io_terms(local, sq.a, sq.e1, sq.e2)[-1]
    return float(F[0]) if single else F


def inside_outside_jacobian(points: np.ndarray, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """F at each point and dF/d(parameter vector), shape (N,) and (N, 11)."""
    vec = np.asarray(vec, dtype=np.float64)
    a, e1, e2 = vec[0:3], vec[3], vec[4]
    R = rotation_zyx(*vec[8:11])
    rel = np.atleast_2d(points) - vec[5:8]
    local = rel @ R
    scaled, nz, log_s, powers, A, pos_a, log_A, G, F = _io_terms(local, a, e1, e2)

    g_over_a = np.where(pos_a, G / np.where(pos_a, A, 1.0), 0.0)
    safe_local = np.where(nz, local, 1.0)
    # dF/d(local coordinate)
    grad_local = np.empty_like(local)
    grad_local[:, 0] = np.where(nz[:, 0], (2.0 / e1) * g_over_a * powers[:, 0] / safe_local[:, 0], 0.0)
    grad_local[:, 1] = np.where(nz[:, 1], (2.0 / e1) * g_over_a * powers[:, 1] / safe_local[:, 1], 0.0)
    grad_local[:, 2] = np.where(nz[:, 2], (2.0 / e1) * powers[:, 2] / safe_local[:, 2], 0.0)

    jac = np.empty((local.shape[0], 11))
    jac[:, 0] = -(2.0 / e1) * g_over_a * powers[:, 0] / a[0]
    jac[:, 1] = -(2.0 / e1) * g_over_a * powers[:, 1] / a[1]
    jac[:, 2] = -(2.0 / e1) * powers[:, 2] / a[2]
    jac[:, 3] = -(e2 / e1 ** 2) * log_A * G - (2.0 / e1 ** 2) * log_s[:, 2] * powers[:, 2]
    weighted_logs = powers[:, 0] * log_s[:, 0] + powers[:, 1] * log_s[:, 1]
    jac[:, 4] = (G / e1) * (log_A - (2.0 / e2) * np.where(pos_a, weighted_logs / np.where(pos_a, A, 1.0), 0.0))
    jac[:, 5:8] = -grad_local @ R.T
    for col, dR in zip((8, 9, 10), _rotation_zyx_partials(*vec[8:11])):
        jac[:, col] = np.einsum("ij,ij->i", grad_local, rel @ dR)
    return F, jac


def surface_point(sq: SuperquadricParams, eta, omega) -> np.ndarray:
    """World-frame surface point(s) at latitude ``eta`` and longitude ``omega``."""
    eta = np.asarray(eta, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    ce = _signed_pow(np.cos(eta), sq.e1)
    local = np.stack(
        (
            sq.a[0] * ce * _signed_pow(np.cos(omega), sq.e2),
            sq.a[1] * ce * _signed_pow(np.sin(omega), sq.e2),
            sq.a[2] * _signed_pow(np.sin(eta), sq.e1) * np.ones_like(omega),
        ),
        axis=-1,
    )
    return local @ sq.rotation.T + sq.t


def volume(sq: SuperquadricParams) -> float:
    return _volume(sq.a, sq.e1, sq.e2)


def _volume(a, e1, e2) -> float:
    return float(2.0 * a[0] * a[1] * a[2] * e1 * e2 * beta_fn(e1 / 2.0 + 1.0, e1) * beta_fn(e2 / 2.0, e2 / 2.0))


def _volume_gradient(vec: np.ndarray) -> np.ndarray:
    a, e1, e2 = vec[0:3], vec[3], vec[4]
    V = _volume(a, e1, e2)
    grad = np.zeros(11)
    grad[0:3] = V / a
    grad[3] = V * (1.0 / e1 + 0.5 * digamma(e1 / 2.0 + 1.0) + digamma(e1) - 1.5 * digamma(1.5 * e1 + 1.0))
    grad[4] = V * (1.0 / e2 + digamma(e2 / 2.0) - digamma(e2))
    return grad


# ---------------------------------------------------------------------------
# recovery

def _check_cloud(cloud: WeightedCloud) -> None:
    if len(cloud) == 0:
        raise ValidationError("cannot evaluate a superquadric against an empty cloud")


def recovery_residuals(cloud: WeightedCloud, vec: np.ndarray) -> np.ndarray:
    """Per-point terms ``W_i * sqrt(a1 a2 a3) * (F_i - 1)``."""
    vec = np.asarray(vec, dtype=np.float64)
    local = _canonical(cloud.positions, vec)
    F = _io_terms(local, vec[0:3], vec[3], vec[4])[-1]
    return cloud.weights * np.sqrt(np.prod(vec[0:3])) * (F - 1.0)


def recovery_cost(cloud: WeightedCloud, sq: SuperquadricParams, beta: float = 0.1) -> float:
    """Weighted radial misfit plus ``beta`` times the superquadric volume."""
    _check_cloud(cloud)
    r = recovery_residuals(cloud, sq.to_vector())
    return float(r @ r) + beta * volume(sq)


def _residual_jacobian(cloud: WeightedCloud, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    F, dF = inside_outside_jacobian(cloud.positions, vec)
    s = np.sqrt(np.prod(vec[0:3]))
    w = cloud.weights
    r = w * s * (F - 1.0)
    J = (w * s)[:, None] * dF
    J[:, 0:3] += (r[:, None] / (2.0 * vec[0:3]))
    return r, J


def recovery_gradient(cloud: WeightedCloud, sq: SuperquadricParams, beta: float = 0.1) -> np.ndarray:
    """Analytic gradient of :func:`recovery_cost` in parameter-vector order."""
    _check_cloud(cloud)
    vec = sq.to_vector()
    r, J = _residual_jacobian(cloud, vec)
    return 2.0 * (J.T @ r) + beta * _volume_gradient(vec)


def pca_init(cloud: WeightedCloud) -> SuperquadricParams:
    """Ellipsoid aligned with the cloud's principal axes, largest extent on a1."""
    if len(cloud) < 10:
        raise ValidationError(f"need at least 10 points to initialise a superquadric, got {len(cloud)}")
    pos = cloud.positions
    centroid = pos.mean(axis=0)
    centred = pos - centroid
    evals, evecs = np.linalg.eigh(centred.T @ centred / len(pos))
    order = np.argsort(evals)[::-1]
    evals, axes = evals[order], evecs[:, order]
    scale = max(float(evals[0]), 1e-300)
    if evals[1] <= 1e-10 * scale:
        raise ValidationError("degenerate cloud: points are collinear or coincident (rank < 2)")
    if np.linalg.det(axes) < 0:
        axes[:, 2] = -axes[:, 2]
    proj = centred @ axes
    half = np.maximum((proj.max(axis=0) - proj.min(axis=0)) / 2.0, A_MIN)
    return SuperquadricParams(half, 1.0, 1.0, centroid, euler_zyx_from_matrix(axes))


def _bounds(config: RecoveryConfig) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(11, -np.inf)
    hi = np.full(11, np.inf)
    lo[0:3] = config.a_min
    lo[3:5], hi[3:5] = config.e_bounds
    return lo, hi


def fit_from(cloud: WeightedCloud, init: SuperquadricParams, config: RecoveryConfig = RecoveryConfig()) -> FitResult:
    """Local descent on the recovery cost starting from ``init``."""
    _check_cloud(cloud)
    lo, hi = _bounds(config)
    beta = config.beta

    root_beta = np.sqrt(beta)

    def residuals(vec):
        r = recovery_residuals(cloud, vec)
        if beta > 0:
            r = np.append(r, root_beta * np.sqrt(_volume(vec[0:3], vec[3], vec[4])))
        return r

    def jacobian(vec, r):
        _, J = _residual_jacobian(cloud, vec)
        if beta > 0:
            # d sqrt(beta V) = sqrt(beta) dV / (2 sqrt(V)); V > 0 inside the bounds
            dv = root_beta * _volume_gradient(vec) / (2.0 * np.sqrt(_volume(vec[0:3], vec[3], vec[4])))
            J = np.vstack((J, dv))
        return J

    result = least_squares_descent(
        residuals,
        init.to_vector(),
        jacobian=jacobian,
        project=lambda v: np.clip(v, lo, hi),
        max_iterations=config.max_iterations,
        tolerance=config.tolerance,
    )
    vec = result.x.copy()
    vec[8:11] = euler_zyx_from_matrix(rotation_zyx(*vec[8:11]))
    return FitResult(
        params=SuperquadricParams.from_vector(vec),
        cost=result.cost,
        initial_cost=result.initial_cost,
        iterations=result.iterations,
        converged=result.converged,
        init=init,
    )


def axis_permuted_starts(init: SuperquadricParams) -> list[SuperquadricParams]:
    """``init`` and its two cyclic relabelings of which principal axis is canonical z.

    The exponent e1 acts on the z axis alone, so the choice of z axis selects
    different basins of the recovery cost.
    """
    R = init.rotation
    starts = []
    for perm in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        idx = list(perm)
        starts.append(SuperquadricParams(init.a[idx], init.e1, init.e2, init.t, euler_zyx_from_matrix(R[:, idx])))
    return starts


def fit(cloud: WeightedCloud, config: RecoveryConfig = RecoveryConfig()) -> FitResult:
    """Recover the superquadric that best explains a weighted cloud.

    Runs local descent from the principal-axis initialisation and from its
    axis relabelings, and keeps the lowest final cost (earliest start on ties).
    """
    init = pca_init(cloud)
    best = None
    for start in axis_permuted_starts(init):
        result = fit_from(cloud, start, config)
        if best is None or result.cost < best.cost:
            best = result
    best.init = init
    best.initial_cost = recovery_cost(cloud, init, config.beta)
    return best


# ---------------------------------------------------------------------------
# text record

def format_params(sq: SuperquadricParams) -> str:
    return "".join(f"{name} = {value!r}\n" for name, value in zip(PARAM_NAMES, sq.to_vector().tolist()))


def parse_params(text: str, allow_extra: bool = False) -> SuperquadricParams:
    """Parse a record of ``name = value`` lines; unknown names are errors unless ``allow_extra``."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"line {lineno}: expected 'name = value'")
        key = key.strip()
        if key not in PARAM_NAMES:
            if allow_extra:
                continue
            raise ParseError(f"line {lineno}: unknown superquadric parameter {key!r}")
        try:
            values[key] = float(value)
        except ValueError:
            raise ParseError(f"line {lineno}: {key} is not a number") from None
    missing = [n for n in PARAM_NAMES if n not in values]
    if missing:
        raise ParseError(f"missing superquadric parameters: {', '.join(missing)}")
    return SuperquadricParams.from_vector([values[n] for n in PARAM_NAMES])


def write_params(sq: SuperquadricParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_params(sq))


def read_params(path) -> SuperquadricParams:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_params(fh.read())
