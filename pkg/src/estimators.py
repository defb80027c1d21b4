"""Problem constants, convergence-bound calculators, and iteration schedules.

On finite datasets sigma^2 and delta are population quantities over the n
examples, computed by exact enumeration. Synthetic oracles carry them by
construction, so only L and mu are ever sampled.
"""

import logging
import math
from dataclasses import dataclass, fields, is_dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from config.settings import FLOAT_FORMAT, LIPSCHITZ_SAFETY, OPTIMUM_GAP
from src.classification import (
    ClassificationOracle,
    LabelMode,
    example_gradients,
    fit_full_batch,
    full_objective,
)
from src.errors import (
    DegenerateProblemError,
    InvalidInputError,
    PreconditionError,
    ScheduleInfeasibleError,
)
from src.labels import SOURCE_UNIFORM, LabelDistribution, SmoothingSpec, resolve_hat, smooth_probs
from src.optimizer import TslaSchedule
from src.synthetic import SyntheticOracle, mix_noise
from utils.rng_helpers import STREAM_HAT, STREAM_INDEX, STREAM_UNBIASED, spawn_generators

logger = logging.getLogger("lsr-lab.estimators")

PROVENANCE_EXACT = "exact"
PROVENANCE_BEST_FOUND = "best_found"

REGIME_CONVERGES = "converges_with_lsr"
REGIME_FLOOR = "lsr_floor"

MIN_MONTE_CARLO_DRAWS = 1000

# Slack for ceilings of quantities that are integers in exact arithmetic
CEIL_RTOL = 1e-9


@dataclass(frozen=True)
class ProblemConstants:
    L: float
    mu: float
    sigma2: float
    delta: float
    f_at_w0: float
    f_star: float = 0.0
    f_star_provenance: str = PROVENANCE_EXACT

    def __post_init__(self):
        if not self.L > 0 or not self.mu > 0:
            raise InvalidInputError(f"need L > 0 and mu > 0, got L={self.L} mu={self.mu}")
        if self.mu > self.L:
            raise InvalidInputError(f"mu={self.mu} exceeds L={self.L}")
        if self.sigma2 < 0 or self.delta < 0:
            raise InvalidInputError(
                f"sigma2 and delta must be >= 0, got {self.sigma2}, {self.delta}"
            )
        if self.f_at_w0 < self.f_star:
            raise InvalidInputError(
                f"F(w0)={self.f_at_w0} is below F*={self.f_star}"
            )
        if self.f_star_provenance not in (PROVENANCE_EXACT, PROVENANCE_BEST_FOUND):
            raise InvalidInputError(f"unknown F* provenance '{self.f_star_provenance}'")


@dataclass(frozen=True, eq=False)
class VarianceReport:
    """Smoothed-gradient second moment about grad F(w) against its Jensen bound."""

    sigma2_hat: float
    delta_hat: float
    smoothed_second_moment: float
    lemma1_bound: float
    probe_point: np.ndarray
    theta: float = 0.0
    method: str = "exact"
    standard_error: float = 0.0

    @property
    def slack(self) -> float:
        return self.lemma1_bound - self.smoothed_second_moment


@dataclass(frozen=True)
class Regime:
    name: str
    threshold: float
    floor: Optional[float] = None


@dataclass(frozen=True)
class IterationPlan:
    """Constant-step single-stage settings (eta, T, theta)."""

    eta: float
    T: int
    theta: float = 0.0


def tolerant_ceil(x: float) -> int:
    """Ceiling that ignores float noise just above an integer."""
    return int(math.ceil(x - CEIL_RTOL * max(1.0, abs(x))))


# --- Variance and delta ---


def _population_moment(grads: np.ndarray, full_grad: np.ndarray) -> float:
    dev = grads - full_grad
    return float(np.mean(np.sum(dev * dev, axis=1)))


def _one_hot_moments(oracle: ClassificationOracle, w: np.ndarray) -> Tuple[np.ndarray, float]:
    model = oracle.model(w)
    grads = example_gradients(model, oracle.data, oracle.data.one_hot_matrix())
    full_grad = np.add.reduce(grads, axis=0) / oracle.num_examples
    return full_grad, _population_moment(grads, full_grad)


def _hat_labels(
    oracle: ClassificationOracle, source: str, fixed: Optional[LabelDistribution]
) -> np.ndarray:
    return oracle.labels_for(LabelMode.hat_only(SmoothingSpec(0.0, source, fixed)))


def estimate_sigma2(oracle, w: Optional[np.ndarray] = None) -> float:
    """(1/n) sum_i ||grad loss(y_i) - grad F(w)||^2 over every example."""
    if isinstance(oracle, SyntheticOracle):
        return float(oracle.noise.sigma2)
    if oracle.num_examples < 1:
        raise InvalidInputError("sigma2 needs a nonempty dataset")
    w = oracle.w0 if w is None else np.asarray(w, dtype=float)
    _, sigma2 = _one_hot_moments(oracle, w)
    return sigma2


def estimate_delta(
    oracle,
    w: Optional[np.ndarray] = None,
    source: str = SOURCE_UNIFORM,
    fixed: Optional[LabelDistribution] = None,
) -> float:
    """Second moment of the y_hat gradient about grad F(w), divided by sigma2.

    The numerator uses y_hat itself, not the smoothed label.
    """
    if isinstance(oracle, SyntheticOracle):
        if oracle.noise.sigma2 == 0.0:
            raise DegenerateProblemError("delta is undefined when sigma2 = 0")
        return float(oracle.noise.delta)
    w = oracle.w0 if w is None else np.asarray(w, dtype=float)
    full_grad, sigma2 = _one_hot_moments(oracle, w)
    if sigma2 == 0.0:
        raise DegenerateProblemError(
            "sigma2 = 0 at this point, so delta is undefined"
        )
    hat_grads = example_gradients(oracle.model(w), oracle.data, _hat_labels(oracle, source, fixed))
    return _population_moment(hat_grads, full_grad) / sigma2


# --- Smoothness and PL constants ---


def lipschitz_ratio(oracle, w: np.ndarray, u: np.ndarray) -> float:
    """max ||grad F(w_i) - grad F(u_i)|| / ||w_i - u_i|| over paired rows.

    Coincident pairs are skipped.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    gaps = np.linalg.norm(w - u, axis=1)
    keep = gaps > 0.0
    skipped = int(np.count_nonzero(~keep))
    if skipped:
        logger.warning("Skipped %d duplicate Lipschitz sample pairs", skipped)
    if not np.any(keep):
        raise InvalidInputError("every Lipschitz sample pair was a duplicate")
    diffs = np.linalg.norm(oracle.gradient(w[keep]) - oracle.gradient(u[keep]), axis=1)
    return float(np.max(diffs / gaps[keep]))


def sample_lipschitz(
    oracle, region: Tuple[float, float] = (-10.0, 10.0), samples: int = 1000, seed: int = 0
) -> float:
    """Largest gradient-difference ratio over ``samples`` random pairs in a box."""
    low, high = region
    if not high > low:
        raise InvalidInputError(f"degenerate region [{low}, {high}]")
    if samples < 2:
        raise InvalidInputError(f"need samples >= 2, got {samples}")
    rng = spawn_generators(seed)[STREAM_INDEX]
    w = rng.uniform(low, high, size=(samples, oracle.dim))
    u = rng.uniform(low, high, size=(samples, oracle.dim))
    return lipschitz_ratio(oracle, w, u)


def estimate_L(
    oracle, region: Tuple[float, float] = (-10.0, 10.0), samples: int = 1000, seed: int = 0
) -> float:
    """Analytic L for synthetic problems; otherwise 1.1 x the sampled maximum ratio."""
    sampled = sample_lipschitz(oracle, region, samples, seed)
    if isinstance(oracle, SyntheticOracle):
        analytic = oracle.problem.L
        if sampled > analytic * (1.0 + 1e-9):
            logger.warning("Sampled Lipschitz ratio %.6g exceeds analytic L=%g", sampled, analytic)
        return float(analytic)
    estimate = LIPSCHITZ_SAFETY * sampled
    logger.info("Estimated L=%.6g from %d pairs in [%g, %g]", estimate, samples, *region)
    return estimate


def estimate_mu(oracle, candidates: Sequence[np.ndarray], f_star: float) -> float:
    """inf over candidates of ||grad F(w)||^2 / (2 (F(w) - F*)).

    Candidates within 1e-12 of F* are skipped.
    """
    points = np.atleast_2d(np.asarray(candidates, dtype=float))
    gap = oracle.objective(points) - f_star
    keep = gap > OPTIMUM_GAP
    skipped = int(np.count_nonzero(~keep))
    if skipped:
        logger.warning("Skipped %d candidates at or below F*", skipped)
    if not np.any(keep):
        raise InvalidInputError("every candidate sits at the optimum; mu is undefined")
    grads = oracle.gradient(points[keep])
    ratios = np.sum(grads * grads, axis=1) / (2.0 * gap[keep])
    return float(np.min(ratios))


# --- Bounds ---


def _check_horizon(eta: float, T: int) -> None:
    if not eta > 0:
        raise InvalidInputError(f"eta must be > 0, got {eta}")
    if T < 1:
        raise InvalidInputError(f"T must be >= 1, got {T}")


def theorem1_bound(f0: float, eta: float, T: int, delta: float, sigma2: float) -> float:
    """2 F(w0) / (eta T) + 2 delta sigma2 for SGD with label smoothing."""
    _check_horizon(eta, T)
    return 2.0 * f0 / (eta * T) + 2.0 * delta * sigma2


def theorem3_bound(f0: float, eta: float, T: int, L: float, sigma2: float) -> float:
    """2 F(w0) / (eta T) + eta L sigma2 for one-hot SGD; needs eta <= 1/L."""
    _check_horizon(eta, T)
    if eta * L > 1.0 + 1e-12:
        raise PreconditionError(f"eta={eta} exceeds 1/L={1.0 / L}")
    return 2.0 * f0 / (eta * T) + eta * L * sigma2


def theorem2_bound(
    delta: float, sigma2: float, mu: float, eta2: float, T2: int, L: float
) -> float:
    """Stage-2 bound 4 delta sigma2 / (mu eta2 T2) + eta2 L sigma2."""
    _check_horizon(eta2, T2)
    return 4.0 * delta * sigma2 / (mu * eta2 * T2) + eta2 * L * sigma2


def stage1_objective_bound(
    f0: float, eta1: float, mu: float, T1: int, theta: float, delta: float, sigma2: float
) -> float:
    """Expected F gap after the smoothed stage."""
    return math.exp(-eta1 * mu * T1) * f0 + ((1.0 - theta) * sigma2 + theta * delta * sigma2) / (
        2.0 * mu
    )


# --- Schedules ---


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon < 1.0:
        raise InvalidInputError(f"epsilon must lie in (0, 1), got {epsilon}")


def _tsla_log_argument(c: ProblemConstants) -> float:
    return 2.0 * c.mu * c.f_at_w0 * (1.0 + c.delta) / (2.0 * c.delta * c.sigma2)


def tsla_t1_exact(c: ProblemConstants) -> float:
    """Unrounded T1 = log(2 mu F(w0) (1 + delta) / (2 delta sigma2)) / (eta1 mu)."""
    eta1 = 1.0 / c.L
    return math.log(_tsla_log_argument(c)) / (eta1 * c.mu)


def tsla_t1_proof_form(c: ProblemConstants) -> float:
    """Unrounded T1 written with the smoothed variance 2 delta sigma2 / (1 + delta)."""
    eta1 = 1.0 / c.L
    smoothed_variance = 2.0 * c.delta * c.sigma2 / (1.0 + c.delta)
    return math.log(2.0 * c.mu * c.f_at_w0 / smoothed_variance) / (eta1 * c.mu)


def tsla_schedule(constants: ProblemConstants, epsilon: float) -> TslaSchedule:
    """TSLA settings that reach an epsilon-stationary point in stage 2."""
    c = constants
    if c.delta == 0.0 or c.sigma2 == 0.0:
        raise DegenerateProblemError(
            f"TSLA needs delta > 0 and sigma2 > 0 (got delta={c.delta}, sigma2={c.sigma2}); "
            "use the baseline schedule instead"
        )
    if not epsilon > 0:
        raise InvalidInputError(f"epsilon must be > 0, got {epsilon}")
    lhs = c.sigma2 * c.delta / c.mu
    if lhs > c.f_at_w0:
        raise ScheduleInfeasibleError(
            f"sigma2*delta/mu = {lhs:.6g} > F(w0) = {c.f_at_w0:.6g}"
        )
    theta = 1.0 / (1.0 + c.delta)
    eta1 = 1.0 / c.L
    t1 = 0 if _tsla_log_argument(c) <= 1.0 else max(0, tolerant_ceil(tsla_t1_exact(c)))
    eta2 = epsilon ** 2 / (2.0 * c.L * c.sigma2)
    t2 = tolerant_ceil(8.0 * c.delta * c.sigma2 / (c.mu * eta2 * epsilon ** 2))
    schedule = TslaSchedule(theta, eta1, t1, eta2, max(1, t2))
    logger.info(
        "TSLA schedule: theta=%.6g eta1=%.6g T1=%d eta2=%.6g T2=%d",
        theta, eta1, schedule.T1, eta2, schedule.T2,
    )
    return schedule


def classify_regime(delta: float, epsilon: float, sigma2: float) -> Regime:
    """Converges iff delta <= epsilon^2 / (4 sigma2); otherwise floor 4 delta sigma2."""
    if not sigma2 > 0:
        raise InvalidInputError(f"sigma2 must be > 0, got {sigma2}")
    _check_epsilon(epsilon)
    threshold = epsilon ** 2 / (4.0 * sigma2)
    if delta <= threshold:
        return Regime(REGIME_CONVERGES, threshold)
    return Regime(REGIME_FLOOR, threshold, 4.0 * delta * sigma2)


def lsr_schedule(constants: ProblemConstants, epsilon: float) -> IterationPlan:
    """eta = 1/L, theta = 1/(1+delta), and T for the delta regime."""
    c = constants
    if c.delta == 0.0:
        raise DegenerateProblemError("delta = 0 gives theta = 1; use the baseline schedule")
    eta = 1.0 / c.L
    theta = 1.0 / (1.0 + c.delta)
    regime = classify_regime(c.delta, epsilon, c.sigma2)
    if regime.name == REGIME_CONVERGES:
        T = tolerant_ceil(4.0 * c.f_at_w0 / (eta * epsilon ** 2))
    else:
        T = tolerant_ceil(c.f_at_w0 / (eta * c.delta * c.sigma2))
    return IterationPlan(eta, max(1, T), theta)


def baseline_schedule(constants: ProblemConstants, epsilon: float) -> IterationPlan:
    """eta = min(1/L, epsilon^2 / (2 L sigma2)) and T = 4 F(w0) / (eta epsilon^2)."""
    c = constants
    _check_epsilon(epsilon)
    eta = 1.0 / c.L
    if c.sigma2 > 0:
        eta = min(eta, epsilon ** 2 / (2.0 * c.L * c.sigma2))
    T = tolerant_ceil(4.0 * c.f_at_w0 / (eta * epsilon ** 2))
    return IterationPlan(eta, max(1, T), 0.0)


def sample_complexity(constants: ProblemConstants, epsilon: float) -> Dict[str, float]:
    """Total stochastic-gradient evaluations per algorithm; inf when it never reaches epsilon."""
    out: Dict[str, float] = {"baseline": float(baseline_schedule(constants, epsilon).T)}
    regime = classify_regime(constants.delta, epsilon, constants.sigma2)
    if regime.name == REGIME_CONVERGES and constants.delta > 0:
        out["lsr"] = float(lsr_schedule(constants, epsilon).T)
    else:
        out["lsr"] = math.inf
    try:
        out["tsla"] = float(tsla_schedule(constants, epsilon).total)
    except (DegenerateProblemError, ScheduleInfeasibleError) as e:
        logger.info("TSLA not applicable: %s", e)
        out["tsla"] = math.inf
    return out


# --- Lemma 1 check ---


def verify_lemma1(
    oracle,
    w: Optional[np.ndarray],
    spec: SmoothingSpec,
    draws: int = 10_000,
    seed: int = 0,
    theta: Optional[float] = None,
) -> VarianceReport:
    """Second moment of the smoothed gradient about grad F(w) vs (1-theta) sigma2 + theta delta sigma2.

    Finite datasets are enumerated exactly; synthetic oracles use Monte Carlo.
    ``theta`` overrides ``spec.theta`` and may be 1.
    """
    theta = spec.theta if theta is None else float(theta)
    if not 0.0 <= theta <= 1.0:
        raise InvalidInputError(f"theta must lie in [0, 1], got {theta}")
    w = oracle.w0 if w is None else np.asarray(w, dtype=float)

    if isinstance(oracle, SyntheticOracle):
        return _lemma1_monte_carlo(oracle, w, theta, draws, seed)

    data = oracle.data
    full_grad, sigma2 = _one_hot_moments(oracle, w)
    if sigma2 == 0.0:
        raise DegenerateProblemError("sigma2 = 0 at this point, so delta is undefined")
    model = oracle.model(w)
    hat = resolve_hat(spec, data.num_classes, data.teacher_labels)
    hat = np.broadcast_to(hat, (data.num_examples, data.num_classes))
    hat_moment = _population_moment(example_gradients(model, data, np.array(hat)), full_grad)
    smoothed = smooth_probs(data.one_hot_matrix(), hat, theta)
    moment = _population_moment(example_gradients(model, data, smoothed), full_grad)
    return VarianceReport(
        sigma2_hat=sigma2,
        delta_hat=hat_moment / sigma2,
        smoothed_second_moment=moment,
        lemma1_bound=(1.0 - theta) * sigma2 + theta * hat_moment,
        probe_point=np.array(w),
        theta=theta,
    )


def _lemma1_monte_carlo(
    oracle: SyntheticOracle, w: np.ndarray, theta: float, draws: int, seed: int
) -> VarianceReport:
    if draws < MIN_MONTE_CARLO_DRAWS:
        raise InvalidInputError(
            f"synthetic Lemma 1 checks need >= {MIN_MONTE_CARLO_DRAWS} draws, got {draws}"
        )
    noise = oracle.noise
    if noise.sigma2 == 0.0:
        raise DegenerateProblemError("delta is undefined when sigma2 = 0")
    generators = spawn_generators(seed)
    xi = generators[STREAM_UNBIASED].standard_normal((draws, oracle.dim))
    zeta = generators[STREAM_HAT].standard_normal((draws, oracle.dim))
    grad = oracle.gradient(w)
    dev = mix_noise(grad, xi, zeta, noise, theta) - grad
    sq = np.sum(dev * dev, axis=1)
    return VarianceReport(
        sigma2_hat=noise.sigma2,
        delta_hat=noise.delta,
        smoothed_second_moment=float(np.mean(sq)),
        lemma1_bound=(1.0 - theta) * noise.sigma2 + theta * noise.hat_second_moment,
        probe_point=np.array(w),
        theta=theta,
        method="monte_carlo",
        standard_error=float(np.std(sq, ddof=1) / math.sqrt(draws)),
    )


# --- Constants bundle ---


def estimate_constants(
    oracle,
    w0: Optional[np.ndarray] = None,
    source: str = SOURCE_UNIFORM,
    fixed: Optional[LabelDistribution] = None,
    region: Tuple[float, float] = (-10.0, 10.0),
    samples: int = 1000,
    seed: int = 0,
    f_star: Optional[float] = None,
    fit_steps: int = 2000,
) -> ProblemConstants:
    """Every constant the bounds and schedules consume, measured at w0.

    Classification oracles have no known F*: unless ``f_star`` is given the
    best full-batch descent value stands in, flagged best_found.
    """
    w0 = oracle.w0 if w0 is None else np.asarray(w0, dtype=float)
    f0 = float(oracle.objective(w0)[0])

    if isinstance(oracle, SyntheticOracle):
        problem = oracle.problem
        return ProblemConstants(
            L=problem.L,
            mu=problem.mu,
            sigma2=oracle.noise.sigma2,
            delta=oracle.noise.delta,
            f_at_w0=f0,
            f_star=problem.f_star,
        )

    sigma2 = estimate_sigma2(oracle, w0)
    delta = estimate_delta(oracle, w0, source, fixed)
    L = estimate_L(oracle, region, samples, seed)
    if f_star is None:
        fitted = fit_full_batch(oracle.model(w0), oracle.data, 1.0 / L, fit_steps)
        f_star = min(full_objective(fitted, oracle.data), f0)
    rng = spawn_generators(seed)[STREAM_INDEX]
    candidates = np.vstack([w0, rng.uniform(region[0], region[1], size=(samples, oracle.dim))])
    mu = estimate_mu(oracle, candidates, f_star)
    if mu > L:
        logger.warning("Estimated mu=%.6g exceeds L=%.6g; clamping to L", mu, L)
        mu = L
    constants = ProblemConstants(L, mu, sigma2, delta, f0, f_star, PROVENANCE_BEST_FOUND)
    logger.info(
        "Constants: L=%.6g mu=%.6g sigma2=%.6g delta=%.6g F(w0)=%.6g F*=%.6g (%s)",
        L, mu, sigma2, delta, f0, f_star, PROVENANCE_BEST_FOUND,
    )
    return constants


def _format_value(value) -> str:
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    if isinstance(value, np.ndarray):
        return ",".join(FLOAT_FORMAT % v for v in value.reshape(-1))
    return str(value)


def format_kv_report(obj, prefix: str = "") -> str:
    """Flat ``key=value`` lines for a dataclass or mapping, in field order."""
    if is_dataclass(obj):
        items = [(f.name, getattr(obj, f.name)) for f in fields(obj)]
        if isinstance(obj, VarianceReport):
            items.append(("slack", obj.slack))
    else:
        items = list(obj.items())
    lines = [f"{prefix}{key}={_format_value(value)}" for key, value in items]
    return "\n".join(lines) + "\n"
