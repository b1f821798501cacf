import functools
from pathlib import Path

import click
import numpy as np
from pydantic import BaseModel, ValidationError

from flowconn import logger
from flowconn.curves import sample_curve
from flowconn.estimators import (
    area_form_field,
    constant_field,
    constant_matrix_field,
    contour_ito_drift,
    drift_vector_field,
    identity_field,
    oracle_psi_derivative,
    projection_matrix_field,
    recover_christoffel_segment,
    recover_curvature_loop,
    verify_theorem,
)
from flowconn.exceptions import ConfigError, FlowconnError
from flowconn.flow import BrownianDriver, FlowConfig
from flowconn.geometry import ManifoldModel, christoffel, check_identities, parse_manifold, random_points
from flowconn.schemas import (
    ChristoffelEntry,
    ChristoffelReport,
    ContourDriftReport,
    ExperimentConfig,
    IdentityCheck,
    IdentityReport,
    RecoveryReport,
    RecoveryRow,
    TheoremReport,
)
from flowconn.utils import load_key_value_file, parse_ladder, parse_vector, rows_to_csv, write_text

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

THEOREM_COLUMNS = [
    "i", "j", "lhs", "rhs", "rhs_se", "dpsi_ij", "dpsi_ji",
    "q_circulation", "boundary_ij", "boundary_ji", "residual", "pass",
]


def shared_options(fn):
    options = [
        click.option("--config", "config_file", type=click.Path(dir_okay=False), help="key=value experiment file; flags override it."),
        click.option("--manifold", help="Manifold spec, e.g. sphere:n=3 or torus:R=2,r=1."),
        click.option("--curve", help="Curve spec, e.g. quarter-great-circle."),
        click.option("--nodes", type=int, help="Number of curve segments N."),
        click.option("--scheme", type=click.Choice(["stratonovich-heun", "ito-euler"])),
        click.option("--h", type=float, help="Flow time step."),
        click.option("--dt", type=float, help="Finite-difference horizon."),
        click.option("--paths", type=int, help="Monte Carlo path count."),
        click.option("--seed", type=int, help="Master seed."),
        click.option("--mode", type=click.Choice(["oracle", "monte-carlo"])),
        click.option("--out", type=click.Path(dir_okay=False), help="Report file; stdout when omitted."),
        click.option("--format", "format", type=click.Choice(["json", "csv"])),
    ]
    return functools.reduce(lambda wrapped, option: option(wrapped), reversed(options), fn)


def resolve_config(config_file: str | None, defaults: dict | None = None, **flags) -> ExperimentConfig:
    """Defaults, then the config file, then explicit flags."""
    values = dict(defaults or {})
    if config_file:
        values.update(load_key_value_file(config_file))
    values.update({key: value for key, value in flags.items() if value is not None})
    cfg = ExperimentConfig(**values)
    logger.debug(f"Resolved config: {cfg.model_dump_json()}")
    return cfg


def run_command(fn):
    """Map domain and validation errors to exit code 2 and propagate the command's exit code."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            code = fn(*args, **kwargs)
        except (FlowconnError, ValidationError) as e:
            logger.error(f"{type(e).__name__}: {e}")
            click.echo(f"Error: {e}", err=True)
            ctx.exit(EXIT_USAGE)
        ctx.exit(code)

    return wrapper


def build_manifold(cfg: ExperimentConfig) -> ManifoldModel:
    overrides = {"derivative": cfg.derivative} if cfg.derivative else {}
    return parse_manifold(cfg.manifold, **overrides)


def build_flow(cfg: ExperimentConfig, m: ManifoldModel) -> tuple[FlowConfig, BrownianDriver]:
    flow = FlowConfig(scheme=cfg.scheme, retract_every_step=cfg.retract_every_step, h=cfg.h)
    driver = BrownianDriver(cfg.seed, cfg.h, cfg.dt, m.ambient_dim, antithetic=cfg.antithetic)
    return flow, driver


def read_point(text: str | None, field: str, m: ManifoldModel) -> np.ndarray:
    if text is None:
        raise ConfigError(f"Field '{field}' is required")
    point = parse_vector(text, field)
    if point.shape != (m.ambient_dim,):
        logger.error(f"Field '{field}' has {len(point)} components, {m.spec} needs {m.ambient_dim}")
        raise ConfigError(f"Field '{field}' must have {m.ambient_dim} components")
    return point


def read_index(value: int, field: str, m: ManifoldModel) -> int:
    if not 1 <= value <= m.ambient_dim:
        raise ConfigError(f"Field '{field}' must be in 1..{m.ambient_dim}, got {value}")
    return value - 1


def emit(report: BaseModel, cfg: ExperimentConfig, columns: list[str], rows: list[dict]) -> None:
    if cfg.format == "csv":
        text = rows_to_csv(columns, rows)
    else:
        text = report.model_dump_json(indent=2, by_alias=True) + "\n"
    write_text(text, Path(cfg.out) if cfg.out else None)


def theorem_rows(report: TheoremReport) -> list[dict]:
    rows = []
    for entry in report.entries:
        row = entry.model_dump(by_alias=True)
        row.update(row.pop("components"))
        rows.append(row)
    return rows


@click.group()
def cli():
    """Recover the Levi-Civita connection of embedded manifolds from stochastic flows."""


@cli.command("christoffel")
@shared_options
@click.option("--point", help="Point on the manifold, e.g. 1,0,0.")
@run_command
def cmd_christoffel(config_file, point, **flags):
    """Print the nonzero Christoffel symbols at a point."""
    cfg = resolve_config(config_file, {"format": "csv"}, point=point, **flags)
    m = build_manifold(cfg)
    x = read_point(cfg.point, "point", m)
    entries = [
        ChristoffelEntry(i=i + 1, j=j + 1, k=k + 1, value=value)
        for i, j, k, value in christoffel(m, x).nonzero()
    ]
    report = ChristoffelReport(manifold=m.spec, point=x.tolist(), entries=entries, config=cfg)
    emit(report, cfg, ["i", "j", "k", "value"], [entry.model_dump() for entry in entries])
    return EXIT_OK


@cli.command("verify-identities")
@shared_options
@click.option("--points", "sample_points", type=int, help="Number of random points.")
@click.option("--derivative", type=click.Choice(["analytic", "fd"]))
@click.option("--tol", "identity_tol", type=float, help="Violation tolerance; defaults by derivative mode.")
@run_command
def cmd_verify_identities(config_file, **flags):
    """Check the projector and connection identities at random points."""
    cfg = resolve_config(config_file, **flags)
    m = build_manifold(cfg)
    points = random_points(m, cfg.sample_points, np.random.default_rng(cfg.seed))
    tolerance = cfg.identity_tol or m.identity_tolerance
    checks = [
        IdentityCheck(
            name=name,
            max_violation=violation,
            worst_point=points[worst].tolist(),
            passed=bool(violation <= tolerance),
        )
        for name, (violation, worst) in check_identities(m, points).items()
    ]
    report = IdentityReport(
        manifold=m.spec, derivative=m.derivative, points=len(points), tolerance=tolerance, checks=checks, config=cfg
    )
    for check in checks:
        if not check.passed:
            logger.warning(f"{check.name}: violation {check.max_violation:.3e} at {check.worst_point}")
    rows = [{**check.model_dump(by_alias=True), "worst_point": ";".join(map(repr, check.worst_point))} for check in checks]
    emit(report, cfg, ["name", "max_violation", "worst_point", "pass"], rows)
    return EXIT_OK if report.passed else EXIT_FAILED


@cli.command("theorem")
@shared_options
@click.option("--q-source", type=click.Choice(["analytic", "monte-carlo"]))
@click.option("--richardson/--no-richardson", default=None)
@click.option("--antithetic/--no-antithetic", default=None)
@click.option("--bias-constant", type=float)
@run_command
def cmd_theorem(config_file, **flags):
    """Verify the connection identity along a curve for every index pair."""
    cfg = resolve_config(config_file, **flags)
    m = build_manifold(cfg)
    c = sample_curve(m, cfg.curve, cfg.nodes)
    flow, driver = build_flow(cfg, m) if cfg.mode == "monte-carlo" else (None, None)
    report = verify_theorem(
        m, c, cfg.mode, cfg.paths, cfg.dt, flow, driver,
        q_source=cfg.q_source,
        richardson=cfg.richardson,
        bias_constant=cfg.bias_constant,
        oracle_tol=cfg.oracle_tol,
        curve_label=cfg.curve,
    )
    report.config = cfg
    emit(report, cfg, THEOREM_COLUMNS, theorem_rows(report))
    return EXIT_OK if report.passed else EXIT_FAILED


@cli.command("recover")
@shared_options
@click.option("--point", help="Base point x.")
@click.option("--direction", help="Tangent direction v for segment recovery.")
@click.option("--kind", "recover", type=click.Choice(["segment", "loop"]))
@click.option("--ladder", help="Segment lengths or loop radii, e.g. 0.04,0.02,0.01.")
@run_command
def cmd_recover(config_file, **flags):
    """Recover connection components from shrinking segments or loops."""
    cfg = resolve_config(config_file, **flags)
    m = build_manifold(cfg)
    x = read_point(cfg.point, "point", m)
    ladder = parse_ladder(cfg.ladder, "ladder")
    flow, driver = build_flow(cfg, m) if cfg.mode == "monte-carlo" else (None, None)
    n = m.ambient_dim

    v, reference = None, None
    if cfg.recover == "segment":
        v = read_point(cfg.direction, "direction", m)
        reference = christoffel(m, x).contract(v)

    rows = []
    for size in ladder:
        if cfg.recover == "segment":
            estimate = recover_christoffel_segment(
                m, x, v, size, cfg.mode, cfg.paths, cfg.dt, flow, driver, N=cfg.nodes, q_source=cfg.q_source
            )
        else:
            estimate = recover_curvature_loop(
                m, x, size, cfg.mode, cfg.paths, cfg.dt, flow, driver, N=cfg.nodes, q_source=cfg.q_source
            )
        rows.extend(
            RecoveryRow(
                size=size,
                i=i + 1,
                j=j + 1,
                estimate=float(estimate.value[i, j]),
                std_error=float(estimate.std_error[i, j]),
                reference=None if reference is None else float(reference[i, j]),
            )
            for i in range(n)
            for j in range(n)
            if i != j
        )

    report = RecoveryReport(
        manifold=m.spec,
        kind=cfg.recover,
        point=x.tolist(),
        direction=None if v is None else v.tolist(),
        mode=cfg.mode,
        rows=rows,
        config=cfg,
    )
    emit(report, cfg, ["size", "i", "j", "estimate", "std_error", "reference"], [row.model_dump() for row in rows])
    return EXIT_OK


@cli.command("contour-drift")
@shared_options
@click.option("--case", "field_case", type=click.Choice(["specialization", "constant", "exact"]))
@click.option("--i", type=int, help="1-based index i of the area form x^i dx^j.")
@click.option("--j", type=int, help="1-based index j of the area form x^i dx^j.")
@run_command
def cmd_contour_drift(config_file, **flags):
    """Evaluate the drift of a line integral carried by a stochastic flow."""
    cfg = resolve_config(config_file, **flags)
    m = build_manifold(cfg)
    c = sample_curve(m, cfg.curve, cfg.nodes)
    n = m.ambient_dim
    i, j = read_index(cfg.i, "i", m), read_index(cfg.j, "j", m)

    oracle = None
    match cfg.field_case:
        case "specialization":
            F, u, sigma = area_form_field(i, j, n), drift_vector_field(m), projection_matrix_field(m)
            oracle = float(oracle_psi_derivative(m, c)[i, j])
        case "constant":
            F, u, sigma = constant_field(np.ones(n)), constant_field(np.zeros(n)), constant_matrix_field(np.eye(n))
        case "exact":
            F, u, sigma = identity_field(n), constant_field(np.zeros(n)), constant_matrix_field(np.eye(n))

    value = contour_ito_drift(F, u, sigma, c)
    difference = None if oracle is None else abs(value - oracle)
    report = ContourDriftReport(
        manifold=m.spec,
        curve=cfg.curve,
        field_case=cfg.field_case,
        i=cfg.i,
        j=cfg.j,
        value=value,
        oracle=oracle,
        difference=difference,
        config=cfg,
    )
    columns = ["field_case", "i", "j", "value", "oracle", "difference"]
    emit(report, cfg, columns, [report.model_dump(include=set(columns))])
    if difference is not None and difference > cfg.oracle_tol:
        logger.warning(f"Drift differs from the oracle by {difference:.3e}")
        return EXIT_FAILED
    return EXIT_OK
