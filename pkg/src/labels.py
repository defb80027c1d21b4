"""Probability-vector labels, label smoothing, and cross-entropy over logits."""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp
from scipy.special import softmax as _softmax

from config.settings import SIMPLEX_TOL
from src.errors import ConfigurationError, InvalidInputError

logger = logging.getLogger("lsr-lab.labels")

SOURCE_UNIFORM = "uniform"
SOURCE_FIXED = "fixed"
SOURCE_TEACHER = "teacher"
SOURCES = (SOURCE_UNIFORM, SOURCE_FIXED, SOURCE_TEACHER)


def _check_simplex(probs: np.ndarray) -> None:
    if probs.ndim != 1 or probs.shape[0] < 2:
        raise InvalidInputError(
            f"label needs a 1-D vector with K >= 2 entries, got shape {probs.shape}"
        )
    if not np.all(np.isfinite(probs)):
        raise InvalidInputError("label entries must be finite")
    if np.any(probs < 0):
        raise InvalidInputError(f"label has negative entries: min={probs.min():.3g}")
    total = float(np.sum(probs))
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise InvalidInputError(f"label entries sum to {total!r}, expected 1")


@dataclass(frozen=True, eq=False)
class LabelDistribution:
    """A probability vector over K classes (y, y_hat, or y^LS)."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        _check_simplex(probs)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def num_classes(self) -> int:
        return int(self.probs.shape[0])

    def is_one_hot(self) -> bool:
        return int(np.count_nonzero(self.probs == 1.0)) == 1


@dataclass(frozen=True, eq=False)
class Logits:
    """Pre-softmax scores f(w; x)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise InvalidInputError(f"logits must be 1-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("logits contain NaN or Inf")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class SmoothingSpec:
    """Smoothing strength theta and the source of y_hat.

    ``source`` is "uniform", "fixed" (with ``fixed``) or "teacher" (the
    dataset's stored teacher predictions).
    """

    theta: float
    source: str = SOURCE_UNIFORM
    fixed: Optional[LabelDistribution] = field(default=None)

    def __post_init__(self):
        theta = float(self.theta)
        if not 0.0 <= theta < 1.0:
            raise InvalidInputError(f"theta must lie in [0, 1), got {theta!r}")
        object.__setattr__(self, "theta", theta)
        if self.source not in SOURCES:
            raise InvalidInputError(
                f"unknown smoothing source '{self.source}', expected one of {SOURCES}"
            )
        if self.source == SOURCE_FIXED and self.fixed is None:
            raise InvalidInputError("fixed smoothing source needs a distribution")
        if self.fixed is not None and not isinstance(self.fixed, LabelDistribution):
            object.__setattr__(self, "fixed", LabelDistribution(self.fixed))

    def describe(self) -> str:
        if self.source == SOURCE_FIXED:
            return f"theta={self.theta:g} fixed"
        return f"theta={self.theta:g} {self.source}"


LabelLike = Union[LabelDistribution, Sequence[float], np.ndarray]
LogitsLike = Union[Logits, Sequence[float], np.ndarray]


def _as_label(y: LabelLike) -> LabelDistribution:
    return y if isinstance(y, LabelDistribution) else LabelDistribution(y)


def _as_logits(z: LogitsLike) -> Logits:
    return z if isinstance(z, Logits) else Logits(z)


def one_hot(index: int, num_classes: int) -> LabelDistribution:
    """Return the one-hot label for class ``index``."""
    if num_classes < 2 or not 0 <= index < num_classes:
        raise InvalidInputError(
            f"class index {index} invalid for K={num_classes}"
        )
    probs = np.zeros(num_classes)
    probs[index] = 1.0
    return LabelDistribution(probs)


def uniform(num_classes: int) -> LabelDistribution:
    """Return the uniform distribution 1/K over all classes."""
    if num_classes < 2:
        raise InvalidInputError(f"K must be >= 2, got {num_classes}")
    return LabelDistribution(np.full(num_classes, 1.0 / num_classes))


def smooth_probs(y: np.ndarray, y_hat: np.ndarray, theta: float) -> np.ndarray:
    """Convex combination (1 - theta) * y + theta * y_hat on raw arrays.

    Works row-wise on (n, K) matrices too; no validation.
    """
    return (1.0 - theta) * y + theta * y_hat


def smooth_label(
    y: LabelLike, y_hat: LabelLike, theta: float
) -> LabelDistribution:
    """Return y^LS = (1 - theta) * y + theta * y_hat."""
    y = _as_label(y)
    y_hat = _as_label(y_hat)
    if y.num_classes != y_hat.num_classes:
        raise InvalidInputError(
            f"label dimension mismatch: {y.num_classes} vs {y_hat.num_classes}"
        )
    theta = float(theta)
    if not 0.0 <= theta < 1.0:
        raise InvalidInputError(f"theta must lie in [0, 1), got {theta!r}")
    return LabelDistribution(smooth_probs(y.probs, y_hat.probs, theta))


def softmax(logits: LogitsLike) -> np.ndarray:
    """Stabilized softmax of a logit vector."""
    return _softmax(_as_logits(logits).values)


def log_softmax(logits: LogitsLike) -> np.ndarray:
    z = _as_logits(logits).values
    return z - logsumexp(z)


def cross_entropy_probs(y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Row-wise sum_i y_i (logsumexp(z) - z_i) on raw arrays.

    Accepts (K,) or (m, K) inputs; returns a scalar array or (m,).
    """
    lse = logsumexp(z, axis=-1, keepdims=True)
    return np.sum(y * (lse - z), axis=-1)


def cross_entropy_grad_probs(y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """softmax(z) - y on raw arrays, row-wise for (m, K)."""
    return _softmax(z, axis=-1) - y


def _check_pair(y: LabelDistribution, z: Logits) -> None:
    if y.num_classes != z.values.shape[0]:
        raise InvalidInputError(
            f"label has K={y.num_classes} but logits have {z.values.shape[0]} entries"
        )


def cross_entropy(y: LabelLike, logits: LogitsLike) -> float:
    """Cross-entropy of label y against softmax(logits); always >= 0."""
    y = _as_label(y)
    z = _as_logits(logits)
    _check_pair(y, z)
    return float(max(cross_entropy_probs(y.probs, z.values), 0.0))


def cross_entropy_grad_logits(y: LabelLike, logits: LogitsLike) -> np.ndarray:
    """Gradient of cross_entropy with respect to the logits."""
    y = _as_label(y)
    z = _as_logits(logits)
    _check_pair(y, z)
    return cross_entropy_grad_probs(y.probs, z.values)


def resolve_hat(
    spec: SmoothingSpec,
    num_classes: int,
    teacher_probs: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Turn a smoothing source into concrete y_hat rows.

    Returns a (K,) vector for uniform/fixed sources and the (n, K) teacher
    matrix for the teacher source.
    """
    if spec.source == SOURCE_UNIFORM:
        return np.full(num_classes, 1.0 / num_classes)
    if spec.source == SOURCE_FIXED:
        if spec.fixed.num_classes != num_classes:
            raise InvalidInputError(
                f"fixed y_hat has K={spec.fixed.num_classes}, problem has K={num_classes}"
            )
        return spec.fixed.probs
    if teacher_probs is None:
        raise ConfigurationError(
            "teacher smoothing requested but the dataset carries no teacher labels"
        )
    return teacher_probs

