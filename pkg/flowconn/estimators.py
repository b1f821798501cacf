import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from flowconn import logger, settings
from flowconn.curves import (
    Curve,
    batched_line_integral_matrix,
    geodesic_segment,
    line_integral_matrix,
    tangent_loop,
    tensor_form_integral,
)
from flowconn.exceptions import DerivativeEvaluationError, EstimatorError, NotTangentError
from flowconn.flow import BrownianDriver, FlowConfig, simulate_points
from flowconn.geometry import (
    ManifoldModel,
    require_on_manifold,
    central_difference,
    christoffel_field,
    drift_field,
    retract_points,
    s_field,
    tangent_basis,
)
from flowconn.schemas import Mode, QSource, TheoremComponents, TheoremEntry, TheoremReport
from flowconn.workers import Moments, path_chunks, run_chunks


@dataclass(frozen=True)
class PsiEstimate:
    """mean[i, j] estimates E of the integral of x^i dx^j over Y_t(c)."""

    mean: np.ndarray
    std_error: np.ndarray
    paths: int
    t: float


@dataclass(frozen=True)
class DerivativeEstimate:
    """
    Estimate of dPsi/dt at t = 0. `antisymmetric_se[i, j]` is the standard
    error of value[i, j] - value[j, i], computed path by path.
    """

    value: np.ndarray
    std_error: np.ndarray
    antisymmetric_se: np.ndarray
    paths: int
    dt: float
    richardson: bool


@dataclass(frozen=True)
class QEstimate:
    value: np.ndarray
    std_error: np.ndarray
    paths: int
    dt: float


@dataclass(frozen=True)
class QTerms:
    """
    q-dependent terms of the theorem's right-hand side.

    circulation[i, j] is the integral of q^i dx^j - q^j dx^i and
    boundary[i, j] = b^i q^j(b) - a^i q^j(a). `combined_se` is the standard
    error of 2 circulation[i, j] + boundary[i, j] - boundary[j, i]; it is zero
    for analytic q.
    """

    circulation: np.ndarray
    boundary: np.ndarray
    combined_se: np.ndarray
    source: QSource


@dataclass(frozen=True)
class TheoremRhs:
    rhs: np.ndarray
    rhs_se: np.ndarray
    dpsi: np.ndarray
    q_terms: QTerms


@dataclass(frozen=True)
class RecoveryEstimate:
    value: np.ndarray
    std_error: np.ndarray
    size: float


def _check_curve(m: ManifoldModel, c: Curve) -> None:
    if c.ambient_dim != m.ambient_dim:
        raise EstimatorError(f"Curve lives in R^{c.ambient_dim}, {m.spec} in R^{m.ambient_dim}")
    for node in c.nodes:
        require_on_manifold(m, node)


def _check_paths(paths: int, first_path: int, driver: BrownianDriver) -> None:
    if paths < 2:
        logger.error(f"Monte Carlo estimate needs at least 2 paths, got {paths}")
        raise EstimatorError(f"Need at least 2 paths, got {paths}")
    if driver.antithetic and (paths % 2 or first_path % 2):
        logger.error(f"Antithetic pairs need an even path count and offset, got {paths} from {first_path}")
        raise EstimatorError("Antithetic sampling needs an even path count starting at an even index")
    if driver.antithetic and paths < 4:
        logger.error(f"Antithetic estimate needs at least 2 pairs, got {paths} paths")
        raise EstimatorError(f"Antithetic sampling needs at least 4 paths for a standard error, got {paths}")


def _flow_moments(
    m: ManifoldModel,
    points: np.ndarray,
    checkpoints: list[int],
    cfg: FlowConfig,
    driver: BrownianDriver,
    paths: int,
    first_path: int,
    reduce: Callable[[np.ndarray], np.ndarray],
) -> Moments:
    """
    Simulate `points` on every path, map each path's snapshots to a sample
    with `reduce`, and accumulate moments chunk by chunk. Antithetic partners
    are averaged before they enter the moments.
    """

    def task(chunk: range) -> Moments:
        snapshots, _ = simulate_points(m, points, checkpoints, cfg, driver, chunk)
        samples = reduce(snapshots)
        if driver.antithetic:
            samples = samples.reshape((len(chunk) // 2, 2) + samples.shape[1:]).mean(axis=1)
        return Moments.from_samples(samples)

    return run_chunks(task, path_chunks(paths, first_path))


def _transported_nodes(c: Curve) -> np.ndarray:
    return c.nodes[:-1] if c.closed else c.nodes


def _psi_of_snapshots(c: Curve, snapshots: np.ndarray) -> np.ndarray:
    """(P, L, K, n) snapshots -> (P, L, n, n) line integral matrices."""
    if c.closed:
        snapshots = np.concatenate([snapshots, snapshots[..., :1, :]], axis=-2)
    return batched_line_integral_matrix(snapshots)


def estimate_psi(
    m: ManifoldModel,
    c: Curve,
    t: float,
    paths: int,
    cfg: FlowConfig,
    driver: BrownianDriver,
    first_path: int = 0,
) -> PsiEstimate:
    _check_curve(m, c)
    _check_paths(paths, first_path, driver)
    steps = driver.steps_for(t, cfg)
    n = m.ambient_dim
    if steps == 0:
        return PsiEstimate(line_integral_matrix(c), np.zeros((n, n)), paths, 0.0)

    logger.info(f"Estimating Psi on {m.spec} at t={t:g} with {paths} paths")
    moments = _flow_moments(
        m, _transported_nodes(c), [steps], cfg, driver, paths, first_path,
        lambda snapshots: _psi_of_snapshots(c, snapshots)[:, 0],
    )
    return PsiEstimate(moments.mean, moments.std_error, paths, t)


def estimate_psi_derivative(
    m: ManifoldModel,
    c: Curve,
    dt: float,
    paths: int,
    cfg: FlowConfig,
    driver: BrownianDriver,
    richardson: bool = False,
    first_path: int = 0,
) -> DerivativeEstimate:
    """
    Forward difference of Psi anchored at the exact t = 0 value. With
    `richardson`, the levels dt and dt/2 share the same paths and are combined
    as 2 D(dt/2) - D(dt).
    """
    _check_curve(m, c)
    _check_paths(paths, first_path, driver)
    if dt < 10 * cfg.h - 1e-12:
        logger.error(f"Difference horizon dt={dt:g} is below 10 h={10 * cfg.h:g}")
        raise EstimatorError(f"dt must be at least 10 h, got dt={dt:g}, h={cfg.h:g}")
    steps = driver.steps_for(dt, cfg)
    if richardson and steps % 2:
        raise EstimatorError(f"Richardson needs an even number of steps, dt/h = {steps}")

    anchor = batched_line_integral_matrix(c.nodes)
    checkpoints = [steps // 2, steps] if richardson else [steps]

    def reduce(snapshots: np.ndarray) -> np.ndarray:
        psi = _psi_of_snapshots(c, snapshots)
        derivative = (psi[:, -1] - anchor) / dt
        if richardson:
            derivative = 2.0 * (psi[:, 0] - anchor) / (dt / 2) - derivative
        return np.stack([derivative, derivative - np.swapaxes(derivative, -1, -2)], axis=1)

    logger.info(
        f"Estimating dPsi/dt on {m.spec} with dt={dt:g}, h={cfg.h:g}, {paths} paths"
        + (", Richardson" if richardson else "")
    )
    moments = _flow_moments(m, _transported_nodes(c), checkpoints, cfg, driver, paths, first_path, reduce)
    se = moments.std_error
    return DerivativeEstimate(moments.mean[0], se[0], se[1], paths, dt, richardson)


def oracle_psi_derivative(m: ManifoldModel, c: Curve) -> np.ndarray:
    """
    Deterministic dPsi/dt(0): the r-circulation, the endpoint terms and the
    integral of S^i_{jk} dx_k, all at chord midpoints.
    """
    _check_curve(m, c)
    n = m.ambient_dim
    if c.segments == 0:
        return np.zeros((n, n))
    r_mid = drift_field(m, c.midpoints)
    increments = c.increments
    circulation = np.array(
        [[math.fsum(r_mid[:, i] * increments[:, j]) for j in range(n)] for i in range(n)]
    )
    a, b = c.nodes[0], c.nodes[-1]
    boundary = np.outer(b, drift_field(m, b)) - np.outer(a, drift_field(m, a))
    return (circulation - circulation.T) + boundary + tensor_form_integral(c, lambda x: s_field(m, x))


def estimate_q(
    m: ManifoldModel,
    x,
    dt: float,
    paths: int,
    cfg: FlowConfig,
    driver: BrownianDriver,
    first_path: int = 0,
) -> QEstimate:
    """[mean of Y_dt(x) - x] / dt."""
    x = require_on_manifold(m, x)
    _check_paths(paths, first_path, driver)
    steps = driver.steps_for(dt, cfg)
    if steps == 0:
        raise EstimatorError("dt must be positive")
    logger.info(f"Estimating q at {x.tolist()} on {m.spec} with {paths} paths")
    moments = _flow_moments(
        m, x[None, :], [steps], cfg, driver, paths, first_path,
        lambda snapshots: (snapshots[:, 0, 0] - x) / dt,
    )
    return QEstimate(moments.mean, moments.std_error, paths, dt)


def _q_terms(c: Curve, q_mid: np.ndarray, q_a: np.ndarray, q_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched over leading axes of the q arrays."""
    weighted = np.einsum("...pi,pj->...ij", q_mid, c.increments)
    circulation = weighted - np.swapaxes(weighted, -1, -2)
    a, b = c.nodes[0], c.nodes[-1]
    boundary = b[:, None] * q_b[..., None, :] - a[:, None] * q_a[..., None, :]
    return circulation, boundary


def analytic_q_terms(m: ManifoldModel, c: Curve) -> QTerms:
    n = m.ambient_dim
    q_mid = drift_field(m, c.midpoints)
    increments = c.increments
    weighted = np.array(
        [[math.fsum(q_mid[:, i] * increments[:, j]) for j in range(n)] for i in range(n)]
    )
    a, b = c.nodes[0], c.nodes[-1]
    boundary = np.outer(b, drift_field(m, b)) - np.outer(a, drift_field(m, a))
    return QTerms(weighted - weighted.T, boundary, np.zeros((n, n)), "analytic")


def estimate_q_terms(
    m: ManifoldModel,
    c: Curve,
    dt: float,
    paths: int,
    cfg: FlowConfig,
    driver: BrownianDriver,
    first_path: int = 0,
) -> QTerms:
    """
    Monte Carlo q at every chord midpoint and both endpoints, pushed through
    the circulation and boundary terms path by path. Chord midpoints sit off
    M, so the flow starts from their retractions.
    """
    _check_curve(m, c)
    _check_paths(paths, first_path, driver)
    steps = driver.steps_for(dt, cfg)
    if steps == 0:
        raise EstimatorError("dt must be positive")
    points = retract_points(m, np.vstack([c.midpoints, c.nodes[:1], c.nodes[-1:]]))
    N = c.segments

    def reduce(snapshots: np.ndarray) -> np.ndarray:
        q = (snapshots[:, 0] - points) / dt
        circulation, boundary = _q_terms(c, q[:, :N], q[:, N], q[:, N + 1])
        combined = 2.0 * circulation + boundary - np.swapaxes(boundary, -1, -2)
        return np.stack([circulation, boundary, combined], axis=1)

    logger.info(f"Estimating q terms at {len(points)} points on {m.spec} with {paths} paths")
    moments = _flow_moments(m, points, [steps], cfg, driver, paths, first_path, reduce)
    return QTerms(moments.mean[0], moments.mean[1], moments.std_error[2], "monte-carlo")


def theorem_rhs(
    m: ManifoldModel,
    c: Curve,
    dpsi: np.ndarray | DerivativeEstimate,
    q_source: QSource | QTerms = "analytic",
) -> TheoremRhs:
    """
    rhs[i, j] = (dpsi_ij - dpsi_ji) - 2 circulation_ij - (boundary_ij - boundary_ji).

    Grouping the antisymmetric parts first makes rhs exactly antisymmetric.
    """
    _check_curve(m, c)
    if isinstance(dpsi, DerivativeEstimate):
        value, dpsi_se = dpsi.value, dpsi.antisymmetric_se
    else:
        value = np.asarray(dpsi, dtype=float)
        dpsi_se = np.zeros_like(value)
    if value.shape != (m.ambient_dim, m.ambient_dim):
        raise EstimatorError(f"dpsi must be {m.ambient_dim}x{m.ambient_dim}, got {value.shape}")

    match q_source:
        case QTerms():
            terms = q_source
        case "analytic":
            terms = analytic_q_terms(m, c)
        case _:
            raise EstimatorError(f"Pass estimated QTerms for q source '{q_source}'")

    rhs = (value - value.T) - 2.0 * terms.circulation - (terms.boundary - terms.boundary.T)
    rhs_se = np.sqrt(dpsi_se**2 + terms.combined_se**2)
    return TheoremRhs(rhs, rhs_se, value, terms)


def theorem_lhs(m: ManifoldModel, c: Curve) -> np.ndarray:
    """lhs[i, j] = integral of Gamma^i_{jk} dx_k."""
    return tensor_form_integral(c, lambda x: christoffel_field(m, x))


def _theorem_rhs_for_mode(
    m: ManifoldModel,
    c: Curve,
    mode: Mode,
    paths: int | None,
    dt: float | None,
    cfg: FlowConfig | None,
    driver: BrownianDriver | None,
    q_source: QSource,
    richardson: bool,
) -> TheoremRhs:
    if mode == "oracle":
        if q_source != "analytic":
            raise EstimatorError("Oracle mode uses analytic q")
        return theorem_rhs(m, c, oracle_psi_derivative(m, c))
    if mode != "monte-carlo":
        raise EstimatorError(f"Unknown mode '{mode}'")
    if paths is None or dt is None or cfg is None or driver is None:
        raise EstimatorError("Monte Carlo mode needs paths, dt, a flow config and a driver")
    dpsi = estimate_psi_derivative(m, c, dt, paths, cfg, driver, richardson=richardson)
    if q_source == "monte-carlo":
        terms = estimate_q_terms(m, c, dt, paths, cfg, driver, first_path=paths)
    else:
        terms = q_source
    return theorem_rhs(m, c, dpsi, terms)


def verify_theorem(
    m: ManifoldModel,
    c: Curve,
    mode: Mode = "oracle",
    paths: int | None = None,
    dt: float | None = None,
    cfg: FlowConfig | None = None,
    driver: BrownianDriver | None = None,
    *,
    q_source: QSource = "analytic",
    richardson: bool = False,
    bias_constant: float | None = None,
    oracle_tol: float | None = None,
    curve_label: str = "custom",
) -> TheoremReport:
    """
    Compare the connection-form circulation along c with the right-hand side
    assembled from dPsi/dt and q, for every ordered pair (i, j).

    Oracle entries pass when |residual| <= oracle_tol; Monte Carlo entries
    pass when |residual| <= 3 rhs_se + C (dt + h + N^-2). A Monte Carlo q
    block uses the path indices right after those of dPsi/dt.
    """
    _check_curve(m, c)
    bias_constant = settings.bias_constant if bias_constant is None else bias_constant
    oracle_tol = settings.oracle_tol if oracle_tol is None else oracle_tol
    logger.info(f"Verifying theorem on {m.spec} along '{curve_label}' in {mode} mode")

    lhs = theorem_lhs(m, c)
    result = _theorem_rhs_for_mode(m, c, mode, paths, dt, cfg, driver, q_source, richardson)
    residual = lhs - result.rhs
    if mode == "oracle":
        band = np.full_like(residual, oracle_tol)
    else:
        band = 3.0 * result.rhs_se + bias_constant * (dt + cfg.h + c.segments**-2.0)

    n = m.ambient_dim
    dpsi, terms = result.dpsi, result.q_terms
    entries = [
        TheoremEntry(
            i=i + 1,
            j=j + 1,
            lhs=float(lhs[i, j]),
            rhs=float(result.rhs[i, j]),
            rhs_se=float(result.rhs_se[i, j]),
            components=TheoremComponents(
                dpsi_ij=float(dpsi[i, j]),
                dpsi_ji=float(dpsi[j, i]),
                q_circulation=float(terms.circulation[i, j]),
                boundary_ij=float(terms.boundary[i, j]),
                boundary_ji=float(terms.boundary[j, i]),
            ),
            residual=float(residual[i, j]),
            passed=bool(abs(residual[i, j]) <= band[i, j]),
        )
        for i in range(n)
        for j in range(n)
    ]
    failures = sum(not entry.passed for entry in entries)
    if failures:
        logger.warning(f"{failures} of {len(entries)} entries outside the acceptance band")
    else:
        logger.info(f"All {len(entries)} entries within the acceptance band")

    monte_carlo = mode == "monte-carlo"
    return TheoremReport(
        manifold=m.spec,
        curve=curve_label,
        mode=mode,
        q_source=q_source,
        paths=paths if monte_carlo else None,
        dt=dt if monte_carlo else None,
        h=cfg.h if monte_carlo else None,
        N=c.segments,
        seed=driver.master_seed if monte_carlo else None,
        scheme=cfg.scheme if monte_carlo else None,
        entries=entries,
    )


# Fields for the contour drift. Derivatives are batched over leading axes and
# fall back to central differences when not supplied.


@dataclass(frozen=True)
class VectorField:
    """
    F with jacobian[..., k, l] = dF^k/dx_l, hessian[..., k, i, j] =
    d2F^k/dx_i dx_j and time_derivative = dF/dt at t = 0.
    """

    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    hessian: Callable[[np.ndarray], np.ndarray] | None = None
    time_derivative: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float | None = None

    @property
    def step(self) -> float:
        return settings.fd_step if self.fd_step is None else self.fd_step

    def jacobian_at(self, x: np.ndarray) -> np.ndarray:
        if self.jacobian is not None:
            return self.jacobian(x)
        return central_difference(lambda y: self.value(y)[..., None], x, self.step)[..., 0, :]

    def hessian_at(self, x: np.ndarray) -> np.ndarray:
        if self.hessian is not None:
            return self.hessian(x)
        return central_difference(self.jacobian_at, x, self.step)

    def time_derivative_at(self, x: np.ndarray) -> np.ndarray:
        if self.time_derivative is not None:
            return self.time_derivative(x)
        return np.zeros_like(x)


@dataclass(frozen=True)
class MatrixField:
    """sigma with derivative[..., j, m, k] = d sigma^{jm}/dx_k."""

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float | None = None

    def derivative_at(self, x: np.ndarray) -> np.ndarray:
        if self.derivative is not None:
            return self.derivative(x)
        step = settings.fd_step if self.fd_step is None else self.fd_step
        return central_difference(self.value, x, step)


def area_form_field(i: int, j: int, n: int) -> VectorField:
    """F^k = x^i delta_{jk}, whose line integral is the integral of x^i dx^j."""
    unit = np.eye(n)[j]
    jacobian = np.zeros((n, n))
    jacobian[j, i] = 1.0
    return VectorField(
        value=lambda x: x[..., i, None] * unit,
        jacobian=lambda x: np.broadcast_to(jacobian, x.shape[:-1] + (n, n)),
        hessian=lambda x: np.zeros(x.shape[:-1] + (n, n, n)),
    )


def drift_vector_field(m: ManifoldModel) -> VectorField:
    return VectorField(value=lambda x: drift_field(m, x), fd_step=m.fd_step)


def projection_matrix_field(m: ManifoldModel) -> MatrixField:
    return MatrixField(value=m.projection, derivative=m.projection_derivative)


def constant_field(c) -> VectorField:
    c = np.asarray(c, dtype=float)
    n = len(c)
    return VectorField(
        value=lambda x: np.broadcast_to(c, x.shape).copy(),
        jacobian=lambda x: np.zeros(x.shape[:-1] + (n, n)),
        hessian=lambda x: np.zeros(x.shape[:-1] + (n, n, n)),
    )


def identity_field(n: int) -> VectorField:
    return VectorField(
        value=lambda x: np.array(x, dtype=float),
        jacobian=lambda x: np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)),
        hessian=lambda x: np.zeros(x.shape[:-1] + (n, n, n)),
    )


def constant_matrix_field(a) -> MatrixField:
    a = np.asarray(a, dtype=float)
    return MatrixField(
        value=lambda x: np.broadcast_to(a, x.shape[:-1] + a.shape).copy(),
        derivative=lambda x: np.zeros(x.shape[:-1] + a.shape + (x.shape[-1],)),
    )


def _evaluate(name: str, fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, shape: tuple) -> np.ndarray:
    try:
        values = np.asarray(fn(x), dtype=float)
    except Exception as e:
        logger.error(f"Evaluating {name} failed: {e}")
        raise DerivativeEvaluationError(f"Evaluating {name} failed: {e}") from e
    if values.shape != shape:
        raise DerivativeEvaluationError(f"{name} has shape {values.shape}, expected {shape}")
    if not np.all(np.isfinite(values)):
        logger.error(f"{name} returned non-finite values")
        raise DerivativeEvaluationError(f"{name} returned non-finite values")
    return values


def contour_ito_drift(F: VectorField, u: VectorField, sigma: MatrixField, c: Curve) -> float:
    """
    d/dt at t = 0 of E of the integral of F over X_t(c), for the flow
    dX = u dt + sigma dW.

    Integrand per midpoint: dF/dt + u^j (dF^k/dx_j - dF^j/dx_k)
    + 1/2 (sigma sigma^T)^{ij} d2F^k/dx_i dx_j
    + dF^j/dx_l sigma^{lm} d sigma^{jm}/dx_k, plus the endpoint term [F.u].
    """
    n = c.ambient_dim
    if c.segments == 0:
        return 0.0
    x = c.midpoints
    N = len(x)
    jac = _evaluate("dF/dx", F.jacobian_at, x, (N, n, n))
    hess = _evaluate("d2F/dx2", F.hessian_at, x, (N, n, n, n))
    dtF = _evaluate("dF/dt", F.time_derivative_at, x, (N, n))
    u_mid = _evaluate("u", u.value, x, (N, n))
    sig = _evaluate("sigma", sigma.value, x, (N, n, n))
    dsig = _evaluate("dsigma/dx", sigma.derivative_at, x, (N, n, n, n))

    integrand = (
        dtF
        + np.einsum("pj,pkj->pk", u_mid, jac - np.swapaxes(jac, -1, -2))
        + 0.5 * np.einsum("pkij,pij->pk", hess, sig @ np.swapaxes(sig, -1, -2))
        + np.einsum("pjl,plm,pjmk->pk", jac, sig, dsig)
    )
    integral = math.fsum((integrand * c.increments).ravel())

    ends = c.nodes[[0, -1]]
    F_ends = _evaluate("F", F.value, ends, (2, n))
    u_ends = _evaluate("u", u.value, ends, (2, n))
    boundary = math.fsum(F_ends[1] * u_ends[1]) - math.fsum(F_ends[0] * u_ends[0])
    return integral + boundary


def recover_christoffel_segment(
    m: ManifoldModel,
    x,
    v,
    eps: float,
    mode: Mode = "oracle",
    paths: int | None = None,
    dt: float | None = None,
    cfg: FlowConfig | None = None,
    driver: BrownianDriver | None = None,
    N: int = 100,
    q_source: QSource = "analytic",
) -> RecoveryEstimate:
    """
    Estimate Gamma^i_{jk}(x) v_k from the right-hand side along a segment of
    length eps leaving x in direction v.
    """
    x = require_on_manifold(m, x)
    v = np.asarray(v, dtype=float)
    if v.shape != x.shape:
        raise EstimatorError(f"Direction must have length {m.ambient_dim}")
    speed = float(np.linalg.norm(v))
    gap = float(np.linalg.norm(v - m.projection(x) @ v))
    if speed == 0.0 or gap > 1e-10:
        logger.error(f"Direction {v.tolist()} is not tangent at {x.tolist()} (normal part {gap:.3e})")
        raise NotTangentError(f"Direction is not a nonzero tangent vector at x (normal part {gap:.3e})")
    if eps <= 0:
        raise EstimatorError("Segment length must be positive")

    c = geodesic_segment(m, x, v, eps, N)
    result = _theorem_rhs_for_mode(m, c, mode, paths, dt, cfg, driver, q_source, False)
    scale = speed / eps
    logger.info(f"Segment recovery on {m.spec} at eps={eps:g} done")
    return RecoveryEstimate(result.rhs * scale, result.rhs_se * scale, eps)


def tangent_area(x: np.ndarray, basis: np.ndarray, c: Curve) -> float:
    """Signed shoelace area of the loop projected to span(basis) at x."""
    coords = (c.nodes - x) @ basis.T
    return 0.5 * math.fsum(coords[:-1, 0] * coords[1:, 1] - coords[1:, 0] * coords[:-1, 1])


def recover_curvature_loop(
    m: ManifoldModel,
    x,
    rho: float,
    mode: Mode = "oracle",
    paths: int | None = None,
    dt: float | None = None,
    cfg: FlowConfig | None = None,
    driver: BrownianDriver | None = None,
    N: int = 200,
    q_source: QSource = "analytic",
) -> RecoveryEstimate:
    """
    Right-hand side circulation around a small loop of radius rho about x,
    divided by the loop's area in the tangent plane at x.
    """
    x = require_on_manifold(m, x)
    c = tangent_loop(m, x, rho, N)
    area = tangent_area(x, tangent_basis(m, x), c)
    if abs(area) < np.finfo(float).tiny:
        raise EstimatorError("Loop encloses no area")
    result = _theorem_rhs_for_mode(m, c, mode, paths, dt, cfg, driver, q_source, False)
    logger.info(f"Loop recovery on {m.spec} at rho={rho:g}: area {area:.6g}")
    return RecoveryEstimate(result.rhs / area, result.rhs_se / abs(area), rho)


