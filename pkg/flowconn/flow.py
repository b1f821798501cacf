from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from flowconn import logger
from flowconn.curves import Curve
from flowconn.exceptions import ConfigError
from flowconn.geometry import ManifoldModel, drift_field, require_on_manifold, retract_points

Scheme = Literal["stratonovich-heun", "ito-euler"]

TIME_TOL = 1e-12


class FlowConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    scheme: Scheme = "stratonovich-heun"
    retract_every_step: bool = True
    h: float = Field(default=1e-4, gt=0)
    record_deviation: bool = False


@dataclass(frozen=True)
class BrownianDriver:
    """
    Counter-based source of Brownian increments.

    Path p draws from its own Philox stream keyed by the master seed, with the
    path index in the high words of the counter, so the increment of (path,
    step) never depends on which other paths are simulated or in what order.
    With `antithetic`, path 2k+1 replays path 2k with the opposite sign.
    """

    master_seed: int
    time_step: float
    horizon: float
    ambient_dim: int
    antithetic: bool = True

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError(f"Seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if self.time_step <= 0 or self.horizon <= 0:
            raise ConfigError("Time step and horizon must be positive")
        if self.time_step > self.horizon + TIME_TOL:
            raise ConfigError(f"Time step {self.time_step:g} exceeds horizon {self.horizon:g}")
        if self.ambient_dim < 1:
            raise ConfigError("Ambient dimension must be positive")

    def _stream(self, path: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.master_seed, counter=path << 128))

    def increments(self, path: int, steps: int) -> np.ndarray:
        """(steps, n) array of N(0, h I) increments; a prefix of any longer request."""
        if path < 0:
            raise ConfigError(f"Path index must be nonnegative, got {path}")
        sign = 1.0
        if self.antithetic and path % 2 == 1:
            path, sign = path - 1, -1.0
        draws = self._stream(path).standard_normal((steps, self.ambient_dim))
        return sign * np.sqrt(self.time_step) * draws

    def batch(self, paths: Sequence[int], steps: int) -> np.ndarray:
        if len(paths) == 0:
            return np.zeros((0, steps, self.ambient_dim))
        return np.stack([self.increments(p, steps) for p in paths])

    def steps_for(self, t: float, cfg: FlowConfig) -> int:
        """Number of scheme steps reaching time t; t must sit on the step grid."""
        if abs(cfg.h - self.time_step) > TIME_TOL:
            logger.error(f"Flow step {cfg.h:g} differs from driver step {self.time_step:g}")
            raise ConfigError(f"Flow step h={cfg.h:g} must equal the driver step {self.time_step:g}")
        if t < 0 or t > self.horizon + TIME_TOL:
            logger.error(f"Time {t:g} outside [0, {self.horizon:g}]")
            raise ConfigError(f"Time {t:g} must lie in [0, {self.horizon:g}]")
        steps = int(round(t / cfg.h))
        if abs(steps * cfg.h - t) > TIME_TOL:
            logger.error(f"Time {t:g} is not a multiple of h={cfg.h:g}")
            raise ConfigError(f"Time {t:g} must be an integer multiple of h={cfg.h:g}")
        return steps


def _apply(projector: np.ndarray, dW: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", projector, dW)


def _advance(m: ManifoldModel, x: np.ndarray, dW: np.ndarray, cfg: FlowConfig) -> np.ndarray:
    match cfg.scheme:
        case "stratonovich-heun":
            projector = m.projection(x)
            predictor = x + _apply(projector, dW)
            return x + 0.5 * _apply(projector + m.projection(predictor), dW)
        case "ito-euler":
            return x + drift_field(m, x) * cfg.h + _apply(m.projection(x), dW)
        case _:
            raise ConfigError(f"Unknown scheme '{cfg.scheme}'")


def simulate_points(
    m: ManifoldModel,
    points: np.ndarray,
    checkpoints: Sequence[int],
    cfg: FlowConfig,
    driver: BrownianDriver,
    paths: Sequence[int],
) -> tuple[np.ndarray, float | None]:
    """
    Push K points along the flow for every listed path.

    All points of one path share the same increments. Returns snapshots of
    shape (len(paths), len(checkpoints), K, n), taken after each requested
    number of steps, and the largest pre-retraction distance from M when
    `cfg.record_deviation` is set.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != m.ambient_dim:
        raise ConfigError(f"Points must have shape (K, {m.ambient_dim}), got {points.shape}")
    if any(k < 0 for k in checkpoints):
        raise ConfigError("Checkpoints must be nonnegative step counts")

    total = max(checkpoints, default=0)
    increments = driver.batch(paths, total)
    x = np.broadcast_to(points, (len(paths),) + points.shape).copy()
    snapshots = np.empty((len(paths), len(checkpoints)) + points.shape)
    deviation = 0.0 if cfg.record_deviation else None

    slots: dict[int, list[int]] = {}
    for slot, k in enumerate(checkpoints):
        slots.setdefault(k, []).append(slot)

    for slot in slots.get(0, []):
        snapshots[:, slot] = x
    for step in range(1, total + 1):
        x = _advance(m, x, increments[:, step - 1, None, :], cfg)
        if cfg.record_deviation:
            deviation = max(deviation, float(np.max(m.distance(x), initial=0.0)))
        if cfg.retract_every_step:
            x = retract_points(m, x)
        for slot in slots.get(step, []):
            snapshots[:, slot] = x

    logger.debug(f"Simulated {len(paths)} paths x {len(points)} points for {total} steps on {m.spec}")
    return snapshots, deviation


def evolve_point(
    m: ManifoldModel, x, t: float, cfg: FlowConfig, driver: BrownianDriver, path: int
) -> np.ndarray:
    """Y_t(x) along one Brownian path."""
    x = require_on_manifold(m, x)
    steps = driver.steps_for(t, cfg)
    snapshots, _ = simulate_points(m, x[None, :], [steps], cfg, driver, [path])
    return snapshots[0, 0, 0]


def transport_curve(
    m: ManifoldModel, c: Curve, t: float, cfg: FlowConfig, driver: BrownianDriver, path: int
) -> Curve:
    """Image Y_t(c) of every node under one realization of the flow."""
    for node in c.nodes:
        require_on_manifold(m, node)
    steps = driver.steps_for(t, cfg)
    if steps == 0:
        return c
    moving = c.nodes[:-1] if c.closed else c.nodes
    snapshots, deviation = simulate_points(m, moving, [steps], cfg, driver, [path])
    nodes = snapshots[0, 0]
    if c.closed:
        nodes = np.vstack([nodes, nodes[:1]])
    return c.with_nodes(nodes, deviation)


def max_deviation(m: ManifoldModel, c: Curve) -> float:
    """
    Largest pre-retraction distance from M recorded while `c` was
    transported, or the current node distance when nothing was recorded.
    """
    if c.deviation is not None:
        return c.deviation
    return float(np.max(m.distance(c.nodes)))
