import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from flowconn import logger
from flowconn.exceptions import CurveError, OneFormEvaluationError, UnknownSpecError
from flowconn.geometry import (
    ManifoldModel,
    Torus,
    retract_points,
    tangent_basis,
)
from flowconn.utils import parse_float, parse_spec, parse_vector

CLOSURE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Curve:
    """
    Discretized C^1 curve: N+1 ambient nodes at increasing parameters in [0, 1].

    `deviation` holds the largest pre-retraction distance from the manifold
    seen while this curve was produced by a flow, when that was recorded.
    """

    nodes: np.ndarray
    params: np.ndarray
    closed: bool = False
    deviation: float | None = field(default=None, compare=False)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        params = np.array(self.params, dtype=float)
        if nodes.ndim != 2 or len(nodes) == 0:
            raise CurveError(f"Nodes must be a non-empty (N+1, n) array, got shape {nodes.shape}")
        if params.shape != (len(nodes),):
            raise CurveError(f"Expected {len(nodes)} parameters, got shape {params.shape}")
        if len(nodes) == 1:
            if params[0] != 0.0:
                raise CurveError("A single-node curve has params [0]")
        elif params[0] != 0.0 or params[-1] != 1.0 or np.any(np.diff(params) <= 0):
            raise CurveError("Parameters must increase strictly from 0 to 1")
        if self.closed and np.max(np.abs(nodes[0] - nodes[-1])) > CLOSURE_TOL:
            raise CurveError("Closed curve endpoints do not coincide")
        nodes.flags.writeable = False
        params.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "params", params)

    @classmethod
    def from_nodes(cls, nodes, closed: bool = False, deviation: float | None = None) -> "Curve":
        nodes = np.asarray(nodes, dtype=float)
        params = np.linspace(0.0, 1.0, len(nodes)) if len(nodes) > 1 else np.zeros(1)
        return cls(nodes, params, closed, deviation)

    @property
    def ambient_dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def segments(self) -> int:
        return len(self.nodes) - 1

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    @property
    def increments(self) -> np.ndarray:
        return self.nodes[1:] - self.nodes[:-1]

    def reversed(self) -> "Curve":
        return Curve(self.nodes[::-1], 1.0 - self.params[::-1], self.closed)

    def with_nodes(self, nodes: np.ndarray, deviation: float | None = None) -> "Curve":
        return Curve(nodes, self.params, self.closed, deviation)


@dataclass(frozen=True)
class OneForm:
    """omega = sum_k coefficients(x)_k dx_k; coefficients are batched (..., n) -> (..., n)."""

    coefficients: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.coefficients(x)


def _check_index(c: Curve, *indices: int) -> None:
    for index in indices:
        if not 0 <= index < c.ambient_dim:
            logger.error(f"Index {index} out of range for ambient dimension {c.ambient_dim}")
            raise IndexError(f"Index {index} out of range 0..{c.ambient_dim - 1}")


def line_integral_xdx(c: Curve, i: int, j: int) -> float:
    """
    Trapezoid quadrature of the integral of x^i dx^j along the polyline.

    Sums are correctly rounded, so reversing the curve negates the result
    exactly.
    """
    _check_index(c, i, j)
    if c.segments == 0:
        return 0.0
    return math.fsum(c.midpoints[:, i] * c.increments[:, j])


def line_integral_matrix(c: Curve) -> np.ndarray:
    n = c.ambient_dim
    return np.array([[line_integral_xdx(c, i, j) for j in range(n)] for i in range(n)])


def batched_line_integral_matrix(nodes: np.ndarray) -> np.ndarray:
    """(..., N+1, n) node arrays -> (..., n, n) matrices of the x^i dx^j integrals."""
    midpoints = 0.5 * (nodes[..., 1:, :] + nodes[..., :-1, :])
    increments = nodes[..., 1:, :] - nodes[..., :-1, :]
    return np.einsum("...pi,...pj->...ij", midpoints, increments)


def one_form_integral(c: Curve, omega: OneForm | Callable[[np.ndarray], np.ndarray]) -> float:
    """Midpoint rule: sum_p omega_k(mid_p) (x^k_{p+1} - x^k_p)."""
    if c.segments == 0:
        return 0.0
    try:
        coefficients = np.asarray(omega(c.midpoints), dtype=float)
    except Exception as e:
        logger.error(f"One-form evaluation failed: {e}")
        raise OneFormEvaluationError(f"One-form evaluation failed: {e}") from e
    if coefficients.shape != c.increments.shape:
        raise OneFormEvaluationError(
            f"One-form returned shape {coefficients.shape}, expected {c.increments.shape}"
        )
    if not np.all(np.isfinite(coefficients)):
        logger.error("One-form returned non-finite coefficients")
        raise OneFormEvaluationError("One-form returned non-finite coefficients")
    return math.fsum((coefficients * c.increments).ravel())


def tensor_form_integral(c: Curve, tensor: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """
    Integrals of T^i_{jk} dx_k for every (i, j), where `tensor` maps
    (N, n) midpoints to (N, n, n, n) tensors.
    """
    n = c.ambient_dim
    if c.segments == 0:
        return np.zeros((n, n))
    try:
        values = np.asarray(tensor(c.midpoints), dtype=float)
    except Exception as e:
        logger.error(f"Tensor form evaluation failed: {e}")
        raise OneFormEvaluationError(f"Tensor form evaluation failed: {e}") from e
    if not np.all(np.isfinite(values)):
        raise OneFormEvaluationError("Tensor form returned non-finite values")
    terms = np.einsum("pijk,pk->pij", values, c.increments)
    return np.array([[math.fsum(terms[:, i, j]) for j in range(n)] for i in range(n)])


def increment_tangency(m: ManifoldModel, c: Curve) -> np.ndarray:
    """Per segment |(I - P(mid)) dx| / |dx|^2; zero-length segments report 0."""
    if c.segments == 0:
        return np.zeros(0)
    increments = c.increments
    normal = increments - np.einsum("pij,pj->pi", m.projection(c.midpoints), increments)
    length = np.sum(increments**2, axis=-1)
    ratio = np.zeros(len(length))
    moving = length > 0
    ratio[moving] = np.linalg.norm(normal[moving], axis=-1) / length[moving]
    return ratio


def _arc(m: ManifoldModel, start: float, stop: float, N: int, closed: bool) -> Curve:
    angles = np.linspace(start, stop, N + 1)
    points = np.zeros((N + 1, m.ambient_dim))
    points[:, 0] = np.cos(angles)
    points[:, 1] = np.sin(angles)
    nodes = retract_points(m, points)
    if closed:
        nodes[-1] = nodes[0]
    return Curve.from_nodes(nodes, closed=closed)


def tangent_loop(m: ManifoldModel, center: np.ndarray, radius: float, N: int) -> Curve:
    """Closed loop of the given radius in the tangent plane at `center`, retracted onto M."""
    if m.intrinsic_dim < 2:
        raise CurveError(f"A loop needs a surface, {m.spec} has dimension {m.intrinsic_dim}")
    if radius <= 0:
        raise CurveError("Loop radius must be positive")
    center = retract_points(m, center)
    basis = tangent_basis(m, center)
    angles = np.linspace(0.0, 2.0 * np.pi, N + 1)[:, None]
    nodes = retract_points(
        m, center + radius * (np.cos(angles) * basis[0] + np.sin(angles) * basis[1])
    )
    nodes[-1] = nodes[0]
    return Curve.from_nodes(nodes, closed=True)


def _segment(m: ManifoldModel, start: np.ndarray, stop: np.ndarray, via: str, N: int) -> Curve:
    start = retract_points(m, start)
    stop = retract_points(m, stop)
    steps = np.linspace(0.0, 1.0, N + 1)[:, None]
    match via:
        case "geodesic":
            tangent = m.logarithm(start, stop)
            if tangent is None:
                raise CurveError(f"No closed-form geodesic on {m.spec}; use via=chord")
            nodes = m.exponential(start, steps * tangent)
        case "chord":
            nodes = retract_points(m, (1.0 - steps) * start + steps * stop)
        case _:
            raise UnknownSpecError(f"Unknown segment mode via={via}")
    return Curve.from_nodes(nodes)


def sample_curve(m: ManifoldModel, spec: str, N: int) -> Curve:
    """
    Sample a built-in parametric curve at N+1 uniform parameter values.

    Specs: `quarter-great-circle`, `great-circle`, `arc:from=t0,to=t1`
    (angles in the e1-e2 plane), `loop:center=x;y;z,radius=rho`,
    `segment:from=..,to=..,via=geodesic|chord`, and on the torus
    `meridian:phi=..` / `parallel:theta=..`.
    """
    if not isinstance(N, (int, np.integer)) or N < 2:
        logger.error(f"Curve needs at least 2 segments, got N={N}")
        raise CurveError(f"N must be an integer >= 2, got {N}")

    name, options = parse_spec(spec)
    logger.debug(f"Sampling curve '{spec}' on {m.spec} with N={N}")

    def real(key: str, default: float | None = None) -> float:
        if key not in options and default is None:
            raise UnknownSpecError(f"Curve '{name}' needs '{key}'")
        return parse_float(options.pop(key, str(default)), key)

    def vector(key: str) -> np.ndarray:
        if key not in options:
            raise UnknownSpecError(f"Curve '{name}' needs '{key}'")
        value = parse_vector(options.pop(key), key, sep=";")
        if value.shape != (m.ambient_dim,):
            raise CurveError(f"'{key}' must have {m.ambient_dim} components")
        return value

    match name:
        case "quarter-great-circle":
            curve = _arc(m, 0.0, 0.5 * np.pi, N, closed=False)
        case "great-circle":
            curve = _arc(m, 0.0, 2.0 * np.pi, N, closed=True)
        case "arc":
            curve = _arc(m, real("from"), real("to"), N, closed=False)
        case "loop":
            curve = tangent_loop(m, vector("center"), real("radius"), N)
        case "segment":
            start, stop = vector("from"), vector("to")
            curve = _segment(m, start, stop, options.pop("via", "geodesic"), N)
        case "meridian" | "parallel":
            if not isinstance(m, Torus):
                raise UnknownSpecError(f"Curve '{name}' is only defined on the torus")
            angles = np.linspace(0.0, 2.0 * np.pi, N + 1)
            if name == "meridian":
                nodes = m.point(np.full_like(angles, real("phi", 0.0)), angles)
            else:
                nodes = m.point(angles, np.full_like(angles, real("theta", 0.0)))
            nodes[-1] = nodes[0]
            curve = Curve.from_nodes(nodes, closed=True)
        case _:
            logger.error(f"Unknown curve '{name}' in '{spec}'")
            raise UnknownSpecError(f"Unknown curve '{name}'")

    if options:
        raise UnknownSpecError(f"Unknown options {sorted(options)} for curve '{name}'")
    return curve


def geodesic_segment(m: ManifoldModel, x: np.ndarray, v: np.ndarray, length: float, N: int) -> Curve:
    """
    Segment of the given length leaving x in direction v: the exact geodesic
    when the model has a closed-form exponential, otherwise the retraction
    of the straight tangent ray.
    """
    if length <= 0:
        raise CurveError("Segment length must be positive")
    direction = np.asarray(v, dtype=float)
    direction = direction / np.linalg.norm(direction)
    steps = np.linspace(0.0, length, N + 1)[:, None]
    nodes = m.exponential(x, steps * direction)
    if nodes is None:
        nodes = retract_points(m, x + steps * direction)
    return Curve.from_nodes(nodes)
