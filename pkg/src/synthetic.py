"""Analytic non-convex PL objectives with controllable gradient noise.

pl_sine, F(w) = sum_j w_j^2 + 3 sin^2(w_j), is PL but not convex; the
shifted quadratic F(w) = L/2 ||w - w*||^2 has closed-form gradient-descent
iterates. Noise is Gaussian with its second moments matched exactly to
sigma^2 (unbiased oracle) and delta * sigma^2 (hat oracle).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from config.settings import OPTIMUM_GAP
from src.errors import InvalidInputError
from utils.rng_helpers import (
    STREAM_HAT,
    STREAM_UNBIASED,
    BufferedStream,
    spawn_generators,
)

logger = logging.getLogger("lsr-lab.synthetic")

PL_SINE = "pl_sine"
SHIFTED_QUADRATIC = "shifted_quadratic"
OBJECTIVES = (PL_SINE, SHIFTED_QUADRATIC)

# |F''| = |2 + 6 cos(2w)| <= 8 per coordinate
PL_SINE_L = 8.0

MODE_UNBIASED = "unbiased"
MODE_HAT = "hat"
MODE_SMOOTHED = "smoothed"

GRID_LOW = -10.0
GRID_HIGH = 10.0
GRID_POINTS = 200_001


def pl_sine_value(w: np.ndarray) -> np.ndarray:
    """sum_j w_j^2 + 3 sin^2(w_j) over the last axis."""
    w = np.asarray(w, dtype=float)
    s = np.sin(w)
    return np.sum(w * w + 3.0 * s * s, axis=-1)


def pl_sine_grad(w: np.ndarray) -> np.ndarray:
    """Coordinate-wise 2 w_j + 3 sin(2 w_j)."""
    w = np.asarray(w, dtype=float)
    return 2.0 * w + 3.0 * np.sin(2.0 * w)


def shifted_quadratic_value(w: np.ndarray, curvature: float, w_star: np.ndarray) -> np.ndarray:
    diff = np.asarray(w, dtype=float) - w_star
    return 0.5 * curvature * np.sum(diff * diff, axis=-1)


def shifted_quadratic_grad(w: np.ndarray, curvature: float, w_star: np.ndarray) -> np.ndarray:
    return curvature * (np.asarray(w, dtype=float) - w_star)


@dataclass(frozen=True, eq=False)
class SyntheticPLProblem:
    """An analytic objective with known L, mu, and minimizer."""

    dim: int
    objective_id: str
    L: float
    mu: float
    f_star: float = 0.0
    w_star: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInputError(f"dim must be >= 1, got {self.dim}")
        if self.objective_id not in OBJECTIVES:
            raise InvalidInputError(
                f"unknown objective '{self.objective_id}', expected one of {OBJECTIVES}"
            )
        if not 0.0 < self.mu <= self.L:
            raise InvalidInputError(f"need 0 < mu <= L, got mu={self.mu} L={self.L}")
        w_star = np.zeros(self.dim) if self.w_star is None else np.array(self.w_star, dtype=float)
        if w_star.shape != (self.dim,):
            raise InvalidInputError(f"w_star must have shape ({self.dim},)")
        w_star.setflags(write=False)
        object.__setattr__(self, "w_star", w_star)

    def value(self, w: np.ndarray) -> np.ndarray:
        if self.objective_id == PL_SINE:
            return pl_sine_value(w)
        return shifted_quadratic_value(w, self.L, self.w_star)

    def grad(self, w: np.ndarray) -> np.ndarray:
        if self.objective_id == PL_SINE:
            return pl_sine_grad(w)
        return shifted_quadratic_grad(w, self.L, self.w_star)


def grid_mu(
    objective_id: str,
    dim: int = 1,
    low: float = GRID_LOW,
    high: float = GRID_HIGH,
    points: int = GRID_POINTS,
    curvature: float = 1.0,
) -> float:
    """Infimum of ||grad F||^2 / (2 (F - F*)) over a dense grid.

    For dim > 1 the grid runs along every coordinate axis and the main
    diagonal; both objectives are separable, so the axis lines carry the
    infimum.
    """
    grid = np.linspace(low, high, points)
    lines = []
    for j in range(dim):
        line = np.zeros((points, dim))
        line[:, j] = grid
        lines.append(line)
    if dim > 1:
        lines.append(np.repeat(grid[:, None], dim, axis=1))
    samples = np.concatenate(lines, axis=0)
    if objective_id == PL_SINE:
        gap = pl_sine_value(samples)
        grad = pl_sine_grad(samples)
    else:
        gap = shifted_quadratic_value(samples, curvature, np.zeros(dim))
        grad = shifted_quadratic_grad(samples, curvature, np.zeros(dim))
    keep = gap > OPTIMUM_GAP
    ratio = np.sum(grad[keep] ** 2, axis=1) / (2.0 * gap[keep])
    mu = float(np.min(ratio))
    logger.debug("Grid mu for %s dim=%d over [%g, %g]: %.6g", objective_id, dim, low, high, mu)
    return mu


def make_pl_sine(dim: int = 1, mu: Optional[float] = None) -> SyntheticPLProblem:
    """pl_sine with L = 8 and mu from the grid infimum unless given."""
    if mu is None:
        mu = grid_mu(PL_SINE, dim)
    return SyntheticPLProblem(dim, PL_SINE, PL_SINE_L, mu, 0.0, np.zeros(dim))


def make_shifted_quadratic(
    dim: int = 1, curvature: float = 1.0, w_star: Optional[Sequence[float]] = None
) -> SyntheticPLProblem:
    """F(w) = curvature/2 ||w - w*||^2, so mu = L = curvature."""
    if curvature <= 0:
        raise InvalidInputError(f"curvature must be > 0, got {curvature}")
    w_star = np.ones(dim) if w_star is None else np.asarray(w_star, dtype=float)
    return SyntheticPLProblem(dim, SHIFTED_QUADRATIC, curvature, curvature, 0.0, w_star)


@dataclass(frozen=True)
class NoiseSpec:
    """Second moments of the unbiased and hat gradient oracles.

    The hat oracle splits delta * sigma2 into a squared bias along the first
    coordinate axis (``bias_fraction``) and isotropic variance (the rest).
    """

    sigma2: float
    delta: float = 0.0
    bias_fraction: float = 0.0

    def __post_init__(self):
        if self.sigma2 < 0 or self.delta < 0:
            raise InvalidInputError(
                f"sigma2 and delta must be >= 0, got {self.sigma2}, {self.delta}"
            )
        if not 0.0 <= self.bias_fraction <= 1.0:
            raise InvalidInputError(
                f"bias_fraction must lie in [0, 1], got {self.bias_fraction}"
            )

    @property
    def hat_second_moment(self) -> float:
        return self.delta * self.sigma2

    def scales(self, dim: int) -> Tuple[float, float]:
        """Per-coordinate standard deviations of the unbiased and hat noise."""
        unbiased = np.sqrt(self.sigma2 / dim)
        hat = np.sqrt((1.0 - self.bias_fraction) * self.hat_second_moment / dim)
        return float(unbiased), float(hat)

    def bias(self, dim: int) -> np.ndarray:
        b = np.zeros(dim)
        b[0] = np.sqrt(self.bias_fraction * self.hat_second_moment)
        return b


def mix_noise(
    grad: np.ndarray,
    xi: np.ndarray,
    zeta: np.ndarray,
    noise: NoiseSpec,
    theta: float,
) -> np.ndarray:
    """(1 - theta) (grad + xi) + theta (grad + b + zeta) from standard normals.

    Written as grad + (1 - theta) xi + theta (b + zeta) so theta = 0 gives the
    unbiased draw and zero noise gives grad, both bit-exactly.
    """
    dim = grad.shape[-1]
    unbiased_scale, hat_scale = noise.scales(dim)
    return grad + (1.0 - theta) * (unbiased_scale * xi) + theta * (
        noise.bias(dim) + hat_scale * zeta
    )


def noisy_gradient(
    problem: SyntheticPLProblem,
    noise: NoiseSpec,
    w: np.ndarray,
    mode: str,
    rng: np.random.Generator,
    theta: float = 0.0,
) -> np.ndarray:
    """One draw from the unbiased, hat, or smoothed(theta) gradient oracle.

    Smoothed draws take the unbiased and the hat noise independently from
    ``rng``, in that order.
    """
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise InvalidInputError("w must be finite")
    grad = problem.grad(w)
    xi = rng.standard_normal(problem.dim)
    if mode == MODE_UNBIASED:
        return mix_noise(grad, xi, np.zeros(problem.dim), noise, 0.0)
    zeta = rng.standard_normal(problem.dim)
    if mode == MODE_HAT:
        return mix_noise(grad, xi, zeta, noise, 1.0)
    if mode == MODE_SMOOTHED:
        if not 0.0 <= theta <= 1.0:
            raise InvalidInputError(f"theta must lie in [0, 1], got {theta}")
        return mix_noise(grad, xi, zeta, noise, theta)
    raise InvalidInputError(f"unknown noise mode '{mode}'")


class SyntheticOracle:
    """Batch-vectorized oracle: parameter arrays are (R, dim), one row per replica."""

    kind = "synthetic"
    exact_gradient_every_step = True
    default_eval_stride = 1

    def __init__(
        self,
        problem: SyntheticPLProblem,
        noise: NoiseSpec,
        w0: Optional[Sequence[float]] = None,
    ):
        self.problem = problem
        self.noise = noise
        if w0 is None:
            w0 = np.full(problem.dim, 3.0)
        self.w0 = np.broadcast_to(np.asarray(w0, dtype=float), (problem.dim,)).copy()
        logger.info(
            "Synthetic oracle: %s dim=%d L=%g mu=%.6g sigma2=%g delta=%g bias_fraction=%g",
            problem.objective_id, problem.dim, problem.L, problem.mu,
            noise.sigma2, noise.delta, noise.bias_fraction,
        )

    @property
    def dim(self) -> int:
        return self.problem.dim

    def objective(self, params: np.ndarray) -> np.ndarray:
        return np.atleast_1d(self.problem.value(params))

    def gradient(self, params: np.ndarray) -> np.ndarray:
        return self.problem.grad(params)

    def prepare_stage(self, smoothing) -> float:
        return smoothing.theta

    def sampler(self, seeds: Sequence[int]) -> "NoiseSampler":
        return NoiseSampler(seeds, self.problem.dim)

    def step_gradient(
        self,
        params: np.ndarray,
        exact_grad: np.ndarray,
        draws: Tuple[np.ndarray, np.ndarray],
        step: int,
        theta: float,
    ) -> np.ndarray:
        xi, zeta = draws
        return mix_noise(exact_grad, xi[step], zeta[step], self.noise, theta)

    def evaluate(self, params: np.ndarray) -> dict:
        return {}


class NoiseSampler:
    """Per-replica independent unbiased and hat noise streams."""

    def __init__(self, seeds: Sequence[int], dim: int):
        def normals(rng, size):
            return rng.standard_normal((size, dim))

        self.unbiased = []
        self.hat = []
        for seed in seeds:
            generators = spawn_generators(seed)
            self.unbiased.append(BufferedStream(generators[STREAM_UNBIASED], normals))
            self.hat.append(BufferedStream(generators[STREAM_HAT], normals))

    def draw(self, count: int) -> Tuple[np.ndarray, np.ndarray]:
        """Standard normals shaped (count, R, dim) for both noise sources."""
        xi = np.stack([s.take(count) for s in self.unbiased], axis=1)
        zeta = np.stack([s.take(count) for s in self.hat], axis=1)
        return xi, zeta
