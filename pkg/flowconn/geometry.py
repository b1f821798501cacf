from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from flowconn import logger, settings
from flowconn.exceptions import (
    CaptureRadiusError,
    ConfigError,
    PointOffManifoldError,
    UnknownSpecError,
)
from flowconn.utils import parse_float, parse_spec

Derivative = Literal["analytic", "fd"]
Extension = Literal["canonical", "retraction"]


def central_difference(
    fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float
) -> np.ndarray:
    """
    Central differences of a batched matrix field.

    `fn` maps (..., n) -> (..., a, b); the result has shape (..., a, b, n)
    with the differentiation index last.
    """
    x = np.asarray(x, dtype=float)
    shift = np.eye(x.shape[-1]) * step
    plus = fn(x[..., None, :] + shift)
    minus = fn(x[..., None, :] - shift)
    return np.moveaxis((plus - minus) / (2.0 * step), -3, -1)


class ManifoldModel(ABC):
    """
    A compact manifold embedded in R^n, described by its tangent projector.

    Subclasses provide the nearest (or canonical) foot point and a smooth
    formula for P defined on a neighbourhood of the manifold. All field
    methods are batched over leading axes and perform no membership checks;
    the module-level operations below are the checked entry points.
    """

    name: str = "manifold"
    has_analytic_derivative: bool = True

    def __init__(
        self,
        ambient_dim: int,
        intrinsic_dim: int,
        *,
        derivative: Derivative = "analytic",
        extension: Extension = "canonical",
        fd_step: float | None = None,
        membership_tol: float | None = None,
        capture_radius: float | None = None,
    ):
        if ambient_dim < 2 or not 1 <= intrinsic_dim < ambient_dim:
            logger.error(f"Invalid dimensions n={ambient_dim}, k={intrinsic_dim}")
            raise ConfigError(
                f"Dimensions must satisfy n >= 2 and 1 <= k < n, got n={ambient_dim}, k={intrinsic_dim}"
            )
        if derivative not in ("analytic", "fd"):
            raise ConfigError(f"Unknown derivative mode '{derivative}'")
        if extension not in ("canonical", "retraction"):
            raise ConfigError(f"Unknown extension '{extension}'")

        self.ambient_dim = ambient_dim
        self.intrinsic_dim = intrinsic_dim
        self.extension = extension
        if extension == "retraction" or not self.has_analytic_derivative:
            derivative = "fd"
        self.derivative = derivative
        self.fd_step = settings.fd_step if fd_step is None else fd_step
        self.membership_tol = (
            settings.membership_tol if membership_tol is None else membership_tol
        )
        self.capture_radius = (
            settings.capture_radius if capture_radius is None else capture_radius
        )
        if self.fd_step <= 0 or self.membership_tol < 0 or self.capture_radius <= 0:
            raise ConfigError("fd_step and capture_radius must be positive, membership_tol nonnegative")

    @property
    @abstractmethod
    def spec(self) -> str:
        """Specification string that rebuilds this model."""

    @abstractmethod
    def foot(self, x: np.ndarray) -> np.ndarray:
        """Nearest (or canonical) on-manifold point, no capture check."""

    @abstractmethod
    def canonical_projection(self, x: np.ndarray) -> np.ndarray:
        """Smooth closed-form extension of P to a neighbourhood of M."""

    def canonical_projection_derivative(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @abstractmethod
    def random_points(self, count: int, rng: np.random.Generator) -> np.ndarray:
        pass

    def exponential(self, x: np.ndarray, v: np.ndarray) -> np.ndarray | None:
        """Exact geodesic x -> exp_x(v) when known in closed form."""
        return None

    def logarithm(self, x: np.ndarray, y: np.ndarray) -> np.ndarray | None:
        """Tangent vector v at x with exp_x(v) = y, when known in closed form."""
        return None

    def projection(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.extension == "retraction":
            return self.canonical_projection(self.foot(x))
        return self.canonical_projection(x)

    def projection_derivative(self, x: np.ndarray) -> np.ndarray:
        """dP[..., j, m, l] = dP^{jm}/dx_l."""
        x = np.asarray(x, dtype=float)
        if self.derivative == "analytic":
            return self.canonical_projection_derivative(x)
        return central_difference(self.projection, x, self.fd_step)

    def distance(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.linalg.norm(x - self.foot(x), axis=-1)

    @property
    def identity_tolerance(self) -> float:
        return settings.analytic_tol if self.derivative == "analytic" else settings.fd_tol

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec!r}, derivative={self.derivative!r}, extension={self.extension!r})"


class Sphere(ManifoldModel):
    """Unit sphere S^{n-1} in R^n with P(x) = I - x x^T / |x|^2."""

    name = "sphere"

    def __init__(self, n: int = 3, **kwargs):
        if not 2 <= n <= 8:
            logger.error(f"Sphere ambient dimension out of range: {n}")
            raise ConfigError(f"Sphere needs 2 <= n <= 8, got n={n}")
        super().__init__(n, n - 1, **kwargs)

    @property
    def spec(self) -> str:
        return f"sphere:n={self.ambient_dim}"

    def foot(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def canonical_projection(self, x):
        x = np.asarray(x, dtype=float)
        sq = np.sum(x * x, axis=-1)[..., None, None]
        return np.eye(self.ambient_dim) - np.einsum("...i,...j->...ij", x, x) / sq

    def canonical_projection_derivative(self, x):
        x = np.asarray(x, dtype=float)
        eye = np.eye(self.ambient_dim)
        sq = np.sum(x * x, axis=-1)[..., None, None, None]
        linear = np.einsum("jl,...m->...jml", eye, x) + np.einsum("...j,ml->...jml", x, eye)
        cubic = np.einsum("...j,...m,...l->...jml", x, x, x)
        return -linear / sq + 2.0 * cubic / sq**2

    def random_points(self, count, rng):
        points = rng.standard_normal((count, self.ambient_dim))
        return points / np.linalg.norm(points, axis=-1, keepdims=True)

    def exponential(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        angle = np.linalg.norm(v, axis=-1, keepdims=True)
        safe = np.where(angle > 0, angle, 1.0)
        return np.cos(angle) * x + np.sin(angle) * v / safe

    def logarithm(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        angle = np.arccos(np.clip(np.sum(x * y, axis=-1, keepdims=True), -1.0, 1.0))
        direction = y - np.sum(x * y, axis=-1, keepdims=True) * x
        norm = np.linalg.norm(direction, axis=-1, keepdims=True)
        return angle * direction / np.where(norm > 0, norm, 1.0)


class Circle(Sphere):
    name = "circle"

    def __init__(self, **kwargs):
        super().__init__(2, **kwargs)

    @property
    def spec(self) -> str:
        return "circle"


class Plane(ManifoldModel):
    """Coordinate k-plane {x_{k+1} = ... = x_n = 0} in R^n."""

    name = "plane"

    def __init__(self, n: int = 3, k: int = 2, **kwargs):
        super().__init__(n, k, **kwargs)
        self._projector = np.diag([1.0] * k + [0.0] * (n - k))

    @property
    def spec(self) -> str:
        return f"plane:n={self.ambient_dim},k={self.intrinsic_dim}"

    def foot(self, x):
        x = np.array(x, dtype=float)
        x[..., self.intrinsic_dim :] = 0.0
        return x

    def canonical_projection(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self._projector, x.shape[:-1] + self._projector.shape).copy()

    def canonical_projection_derivative(self, x):
        x = np.asarray(x, dtype=float)
        n = self.ambient_dim
        return np.zeros(x.shape[:-1] + (n, n, n))

    def random_points(self, count, rng):
        points = np.zeros((count, self.ambient_dim))
        points[:, : self.intrinsic_dim] = rng.standard_normal((count, self.intrinsic_dim))
        return points

    def exponential(self, x, v):
        return np.asarray(x, dtype=float) + np.asarray(v, dtype=float)

    def logarithm(self, x, y):
        return np.asarray(y, dtype=float) - np.asarray(x, dtype=float)


class Torus(ManifoldModel):
    """
    Torus of revolution about the x3 axis: tube radius r around the circle of
    radius R. P(x) = I - n n^T with n the unit normal at the nearest point.
    """

    name = "torus"

    def __init__(self, R: float = 2.0, r: float = 1.0, **kwargs):
        if not R > r > 0:
            logger.error(f"Torus radii must satisfy R > r > 0, got R={R}, r={r}")
            raise ConfigError(f"Torus radii must satisfy R > r > 0, got R={R}, r={r}")
        super().__init__(3, 2, **kwargs)
        self.R = float(R)
        self.r = float(r)
        if self.capture_radius >= 0.9 * self.r:
            logger.debug(f"Torus capture radius clipped to {0.9 * self.r}")
            self.capture_radius = 0.9 * self.r

    @property
    def spec(self) -> str:
        return f"torus:R={self.R:g},r={self.r:g}"

    def point(self, phi, theta) -> np.ndarray:
        """Surface point at toroidal angle phi and poloidal angle theta."""
        phi = np.asarray(phi, dtype=float)
        theta = np.asarray(theta, dtype=float)
        ring = self.R + self.r * np.cos(theta)
        return np.stack(
            [ring * np.cos(phi), ring * np.sin(phi), self.r * np.sin(theta)], axis=-1
        )

    def _frame(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            rho = np.linalg.norm(x[..., :2], axis=-1)
            u = np.zeros_like(x)
            u[..., :2] = x[..., :2] / rho[..., None]
            offset = x - self.R * u
            length = np.linalg.norm(offset, axis=-1)
            normal = offset / length[..., None]
        return rho, u, length, normal

    def foot(self, x):
        _, u, _, normal = self._frame(x)
        return self.R * u + self.r * normal

    def canonical_projection(self, x):
        _, _, _, normal = self._frame(x)
        return np.eye(3) - np.einsum("...i,...j->...ij", normal, normal)

    def canonical_projection_derivative(self, x):
        rho, u, length, normal = self._frame(x)
        eye = np.eye(3)
        du = np.zeros(np.shape(x)[:-1] + (3, 3))
        planar = u[..., :2]
        du[..., :2, :2] = (
            np.eye(2) - np.einsum("...i,...j->...ij", planar, planar)
        ) / rho[..., None, None]
        d_offset = eye - self.R * du
        tangential = eye - np.einsum("...i,...j->...ij", normal, normal)
        d_normal = np.einsum("...ab,...bl->...al", tangential, d_offset) / length[..., None, None]
        return -(
            np.einsum("...jl,...m->...jml", d_normal, normal)
            + np.einsum("...j,...ml->...jml", normal, d_normal)
        )

    def random_points(self, count, rng):
        angles = rng.uniform(0.0, 2.0 * np.pi, size=(count, 2))
        return self.point(angles[:, 0], angles[:, 1])


class Ellipsoid(ManifoldModel):
    """
    Ellipsoid sum(x_i^2 / a_i^2) = 1 in R^3. The nearest point has no closed
    form: it is found by Newton iterations on the Lagrange multiplier, and
    the projector derivative always uses finite differences.
    """

    name = "ellipsoid"
    has_analytic_derivative = False

    def __init__(self, a: float = 1.0, b: float = 2.0, c: float = 3.0, **kwargs):
        axes = np.array([a, b, c], dtype=float)
        if np.any(axes <= 0):
            logger.error(f"Ellipsoid semi-axes must be positive, got {axes}")
            raise ConfigError("Ellipsoid semi-axes must be positive")
        super().__init__(3, 2, **kwargs)
        self.axes = axes
        # nearest-point map is smooth inside the smallest focal distance
        focal = axes.min() ** 2 / axes.max()
        if self.capture_radius >= 0.9 * focal:
            self.capture_radius = 0.9 * focal

    @property
    def spec(self) -> str:
        a, b, c = self.axes
        return f"ellipsoid:a={a:g},b={b:g},c={c:g}"

    def foot(self, x):
        x = np.asarray(x, dtype=float)
        sq = self.axes**2
        lower = -sq.min()
        t = np.zeros(x.shape[:-1])
        with np.errstate(invalid="ignore", divide="ignore"):
            for _ in range(settings.newton_max_iter):
                denom = sq + t[..., None]
                weighted = sq * x**2
                value = np.sum(weighted / denom**2, axis=-1) - 1.0
                slope = -2.0 * np.sum(weighted / denom**3, axis=-1)
                candidate = t - value / slope
                candidate = np.where(candidate > lower, candidate, 0.5 * (t + lower))
                converged = np.abs(candidate - t) <= settings.newton_tol * (1.0 + np.abs(t))
                t = candidate
                if np.all(converged | ~np.isfinite(t)):
                    break
            else:
                logger.warning(
                    f"Ellipsoid nearest-point Newton hit {settings.newton_max_iter} iterations"
                )
            return sq * x / (sq + t[..., None])

    def canonical_projection(self, x):
        y = self.foot(x)
        gradient = y / self.axes**2
        normal = gradient / np.linalg.norm(gradient, axis=-1, keepdims=True)
        return np.eye(3) - np.einsum("...i,...j->...ij", normal, normal)

    def random_points(self, count, rng):
        directions = rng.standard_normal((count, 3))
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        return directions * self.axes


def parse_manifold(spec: str, **overrides) -> ManifoldModel:
    """
    Build a manifold from the shared grammar, e.g. `sphere:n=3`, `circle`,
    `torus:R=2,r=1`, `ellipsoid:a=1,b=2,c=3`, `plane:n=3,k=2`. The optional
    keys `derivative` and `extension` select the derivative mode and the
    off-manifold extension of P.
    """
    name, options = parse_spec(spec)
    kwargs = dict(overrides)
    for key in ("derivative", "extension"):
        if key in options:
            kwargs[key] = options.pop(key)

    def integer(key: str, default: int) -> int:
        value = parse_float(options.pop(key, str(default)), key)
        if value != int(value):
            raise ConfigError(f"Field '{key}' must be an integer")
        return int(value)

    def real(key: str, default: float) -> float:
        return parse_float(options.pop(key, str(default)), key)

    match name:
        case "sphere":
            model = Sphere(integer("n", 3), **kwargs)
        case "circle":
            model = Circle(**kwargs)
        case "plane":
            model = Plane(integer("n", 3), integer("k", 2), **kwargs)
        case "torus":
            model = Torus(real("R", 2.0), real("r", 1.0), **kwargs)
        case "ellipsoid":
            model = Ellipsoid(real("a", 1.0), real("b", 2.0), real("c", 3.0), **kwargs)
        case _:
            logger.error(f"Unknown manifold '{name}' in '{spec}'")
            raise UnknownSpecError(f"Unknown manifold '{name}'")

    if options:
        logger.error(f"Unknown options {sorted(options)} for manifold '{name}'")
        raise UnknownSpecError(f"Unknown options {sorted(options)} for manifold '{name}'")
    logger.debug(f"Resolved manifold {model!r}")
    return model


# Batched fields. They evaluate the extension of P, so they are also valid at
# quadrature points slightly off the manifold.


def s_field(m: ManifoldModel, x: np.ndarray) -> np.ndarray:
    projector = m.projection(x)
    derivative = m.projection_derivative(x)
    return np.einsum("...im,...jml->...ijl", projector, derivative)


def drift_field(m: ManifoldModel, x: np.ndarray) -> np.ndarray:
    return 0.5 * np.einsum("...lil->...i", s_field(m, x))


def christoffel_field(m: ManifoldModel, x: np.ndarray) -> np.ndarray:
    s = s_field(m, x)
    return s - np.swapaxes(s, -3, -2)


def q_remark_field(m: ManifoldModel, x: np.ndarray) -> np.ndarray:
    s = s_field(m, x)
    gamma = s - np.swapaxes(s, -3, -2)
    divergence = np.einsum("...ill->...i", m.projection_derivative(x))
    return 0.25 * (np.einsum("...lil->...i", gamma) + divergence)


@dataclass(frozen=True)
class ChristoffelTensor:
    """values[i, j, k] = Gamma^i_{jk}; antisymmetric in (i, j)."""

    values: np.ndarray

    def contract(self, v: np.ndarray) -> np.ndarray:
        return np.einsum("ijk,k->ij", self.values, np.asarray(v, dtype=float))

    def nonzero(self, tol: float = 1e-12) -> list[tuple[int, int, int, float]]:
        return [
            (int(i), int(j), int(k), float(self.values[i, j, k]))
            for i, j, k in np.argwhere(np.abs(self.values) > tol)
        ]


def _as_point(m: ManifoldModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (m.ambient_dim,):
        logger.error(f"Point of shape {x.shape} used with ambient dimension {m.ambient_dim}")
        raise ValueError(f"Point must have length {m.ambient_dim}, got shape {x.shape}")
    return x


def require_on_manifold(m: ManifoldModel, x) -> np.ndarray:
    x = _as_point(m, x)
    gap = float(m.distance(x))
    if not gap <= m.membership_tol:
        logger.error(f"Point {x.tolist()} is {gap:.3e} away from {m.spec}")
        raise PointOffManifoldError(
            f"Point is {gap:.3e} away from {m.spec} (tolerance {m.membership_tol:.1e})"
        )
    return x


def projection_at(m: ManifoldModel, x) -> np.ndarray:
    return m.projection(require_on_manifold(m, x))


def s_tensor(m: ManifoldModel, x) -> np.ndarray:
    """S[i, j, l] = sum_m P^{im} dP^{jm}/dx_l."""
    return s_field(m, require_on_manifold(m, x))


def drift_r(m: ManifoldModel, x) -> np.ndarray:
    """r^i = 1/2 sum_l S^l_{il}: the Ito drift of Brownian motion on M."""
    return drift_field(m, require_on_manifold(m, x))


def christoffel(m: ManifoldModel, x) -> ChristoffelTensor:
    return ChristoffelTensor(christoffel_field(m, require_on_manifold(m, x)))


def q_via_remark(m: ManifoldModel, x) -> np.ndarray:
    """q^i = 1/4 [sum_l Gamma^l_{il} + sum_l dP^{il}/dx_l]."""
    return q_remark_field(m, require_on_manifold(m, x))


def retract_points(m: ManifoldModel, x: np.ndarray) -> np.ndarray:
    """Batched retraction; every point must lie within the capture radius."""
    x = np.asarray(x, dtype=float)
    gap = m.distance(x)
    if not np.all(gap <= m.capture_radius):
        worst = float(np.nanmax(np.where(np.isfinite(gap), gap, np.inf)))
        logger.error(f"Retraction failed on {m.spec}: distance {worst:.3e} exceeds capture radius")
        raise CaptureRadiusError(
            f"Point at distance {worst:.3e} from {m.spec} exceeds capture radius {m.capture_radius:g}"
        )
    return m.foot(x)


def retract(m: ManifoldModel, x) -> np.ndarray:
    return retract_points(m, _as_point(m, x))


def distance(m: ManifoldModel, x) -> float:
    return float(m.distance(_as_point(m, x)))


def tangent_basis(m: ManifoldModel, x) -> np.ndarray:
    """
    Orthonormal basis of T_xM as rows, built by Gram-Schmidt over
    P(x)e_1, ..., P(x)e_n in index order.
    """
    projector = projection_at(m, x)
    basis: list[np.ndarray] = []
    for column in projector.T:
        residual = column - sum((column @ b) * b for b in basis) if basis else column.copy()
        norm = np.linalg.norm(residual)
        if norm > 1e-8:
            basis.append(residual / norm)
        if len(basis) == m.intrinsic_dim:
            break
    return np.array(basis)


def random_points(m: ManifoldModel, count: int, rng: np.random.Generator) -> np.ndarray:
    return m.random_points(count, rng)


def check_identities(m: ManifoldModel, points: np.ndarray) -> dict[str, tuple[float, int]]:
    """
    Evaluate the projector and connection identities at every point.

    Returns, per identity, the maximum violation and the index of the point
    where it occurs.
    """
    points = np.asarray(points, dtype=float)
    logger.info(f"Checking geometry identities on {m.spec} at {len(points)} points")
    projector = m.projection(points)
    derivative = m.projection_derivative(points)
    s = np.einsum("...im,...jml->...ijl", projector, derivative)
    gamma = s - np.swapaxes(s, -3, -2)
    r = 0.5 * np.einsum("...lil->...i", s)
    q = 0.25 * (
        np.einsum("...lil->...i", gamma) + np.einsum("...ill->...i", derivative)
    )
    rank = np.sum(np.linalg.eigvalsh(0.5 * (projector + np.swapaxes(projector, -1, -2))) > 0.5, axis=-1)

    per_point = {
        "idempotent": np.abs(projector @ projector - projector).max(axis=(-2, -1)),
        "symmetric": np.abs(projector - np.swapaxes(projector, -1, -2)).max(axis=(-2, -1)),
        "trace": np.abs(np.trace(projector, axis1=-2, axis2=-1) - m.intrinsic_dim),
        "rank": np.abs(rank - m.intrinsic_dim).astype(float),
        "s_plus_s_star": np.abs(s + np.swapaxes(s, -3, -2) - derivative).max(axis=(-3, -2, -1)),
        "gamma_antisymmetric": np.abs(gamma + np.swapaxes(gamma, -3, -2)).max(axis=(-3, -2, -1)),
        "q_equals_r": np.abs(q - r).max(axis=-1),
    }
    report = {}
    for name, values in per_point.items():
        worst = int(np.argmax(values))
        report[name] = (float(values[worst]), worst)
        logger.debug(f"{name}: max violation {values[worst]:.3e} at point {worst}")
    return report
