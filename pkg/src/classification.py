"""Finite-dataset classification problems: softmax regression and a tanh MLP.

The empirical distribution over a finite sample stands in for the data
distribution, so F(w), its gradient, and every variance the theory uses are
exactly computable.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from config.settings import SIMPLEX_TOL
from src.errors import InvalidInputError
from src.labels import (
    LabelDistribution,
    Logits,
    SmoothingSpec,
    cross_entropy_grad_probs,
    cross_entropy_probs,
    resolve_hat,
    smooth_probs,
)
from src.labels import softmax as _label_softmax
from utils.rng_helpers import BufferedStream, spawn_generators, STREAM_INDEX

logger = logging.getLogger("lsr-lab.classification")

SOFTMAX_LINEAR = "softmax_linear"
MLP_ONE_HIDDEN = "mlp_one_hidden"
MODEL_KINDS = (SOFTMAX_LINEAR, MLP_ONE_HIDDEN)

MODE_ONE_HOT = "one_hot"
MODE_HAT_ONLY = "hat_only"
MODE_SMOOTHED = "smoothed"


@dataclass(frozen=True, eq=False)
class Dataset:
    """n feature vectors, class indices, and optional teacher distributions."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    teacher_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        features = np.array(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        if features.ndim != 2 or features.shape[0] < 1:
            raise InvalidInputError(
                f"features must be an (n, d) array with n >= 1, got {features.shape}"
            )
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != features.shape[0]:
            raise InvalidInputError(
                f"{labels.shape[0]} labels for {features.shape[0]} examples"
            )
        k = int(self.num_classes)
        if k < 2:
            raise InvalidInputError(f"K must be >= 2, got {k}")
        if labels.min() < 0 or labels.max() >= k:
            raise InvalidInputError(f"label index outside [0, {k})")

        teacher = self.teacher_labels
        if teacher is not None:
            teacher = np.array(teacher, dtype=float)
            if teacher.shape != (features.shape[0], k):
                raise InvalidInputError(
                    f"teacher labels must have shape {(features.shape[0], k)}, "
                    f"got {teacher.shape}"
                )
            if np.any(teacher < 0) or np.any(
                np.abs(teacher.sum(axis=1) - 1.0) > SIMPLEX_TOL
            ):
                raise InvalidInputError("teacher labels must be probability vectors")
            teacher.setflags(write=False)

        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", k)
        object.__setattr__(self, "teacher_labels", teacher)

    @property
    def num_examples(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    def one_hot_matrix(self) -> np.ndarray:
        y = np.zeros((self.num_examples, self.num_classes))
        y[np.arange(self.num_examples), self.labels] = 1.0
        return y

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        teacher = None if self.teacher_labels is None else self.teacher_labels[idx]
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, teacher)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of f(w; x): kind, input dimension d, classes K, hidden width."""

    kind: str
    num_features: int
    num_classes: int
    hidden: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InvalidInputError(
                f"unknown model kind '{self.kind}', expected one of {MODEL_KINDS}"
            )
        if self.num_features < 1 or self.num_classes < 2:
            raise InvalidInputError(
                f"need d >= 1 and K >= 2, got d={self.num_features} K={self.num_classes}"
            )
        if self.kind == MLP_ONE_HIDDEN and self.hidden < 1:
            raise InvalidInputError("mlp_one_hidden needs a hidden width >= 1")

    @property
    def num_params(self) -> int:
        d, k, h = self.num_features, self.num_classes, self.hidden
        if self.kind == SOFTMAX_LINEAR:
            return k * (d + 1)
        return h * (d + 1) + k * (h + 1)


@dataclass(frozen=True, eq=False)
class Model:
    """A model spec together with its flat parameter vector w."""

    spec: ModelSpec
    params: np.ndarray

    def __post_init__(self):
        params = np.array(self.params, dtype=float).reshape(-1)
        if params.shape[0] != self.spec.num_params:
            raise InvalidInputError(
                f"{self.spec.kind} with d={self.spec.num_features}, K={self.spec.num_classes}, "
                f"h={self.spec.hidden} needs {self.spec.num_params} params, got {params.shape[0]}"
            )
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    def with_params(self, params: np.ndarray) -> "Model":
        return Model(self.spec, params)


@dataclass(frozen=True, eq=False)
class LabelMode:
    """Which label the per-example loss uses: y, y_hat, or y^LS."""

    kind: str
    smoothing: Optional[SmoothingSpec] = None

    def __post_init__(self):
        if self.kind not in (MODE_ONE_HOT, MODE_HAT_ONLY, MODE_SMOOTHED):
            raise InvalidInputError(f"unknown label mode '{self.kind}'")
        if self.kind != MODE_ONE_HOT and self.smoothing is None:
            raise InvalidInputError(f"label mode '{self.kind}' needs a smoothing spec")

    @classmethod
    def one_hot(cls) -> "LabelMode":
        return cls(MODE_ONE_HOT)

    @classmethod
    def hat_only(cls, source: SmoothingSpec) -> "LabelMode":
        return cls(MODE_HAT_ONLY, source)

    @classmethod
    def smoothed(cls, smoothing: SmoothingSpec) -> "LabelMode":
        return cls(MODE_SMOOTHED, smoothing)


# --- Parameter layout ---


def _unpack(spec: ModelSpec, params: np.ndarray) -> Tuple[np.ndarray, ...]:
    d, k, h = spec.num_features, spec.num_classes, spec.hidden
    if spec.kind == SOFTMAX_LINEAR:
        weights = params[: k * d].reshape(k, d)
        bias = params[k * d :]
        return weights, bias
    w1 = params[: h * d].reshape(h, d)
    b1 = params[h * d : h * (d + 1)]
    offset = h * (d + 1)
    w2 = params[offset : offset + k * h].reshape(k, h)
    b2 = params[offset + k * h :]
    return w1, b1, w2, b2


def _forward(spec: ModelSpec, params: np.ndarray, x: np.ndarray):
    """Logits for a batch x of shape (m, d), plus the hidden activations."""
    if spec.kind == SOFTMAX_LINEAR:
        weights, bias = _unpack(spec, params)
        return x @ weights.T + bias, None
    w1, b1, w2, b2 = _unpack(spec, params)
    hidden = np.tanh(x @ w1.T + b1)
    return hidden @ w2.T + b2, hidden


def _per_example_backward(
    spec: ModelSpec,
    params: np.ndarray,
    x: np.ndarray,
    hidden: Optional[np.ndarray],
    dlogits: np.ndarray,
) -> np.ndarray:
    """Per-example parameter gradients (m, p) given dloss/dlogits (m, K)."""
    m = x.shape[0]
    if spec.kind == SOFTMAX_LINEAR:
        dw = np.einsum("mk,md->mkd", dlogits, x).reshape(m, -1)
        return np.concatenate([dw, dlogits], axis=1)
    _, _, w2, _ = _unpack(spec, params)
    dw2 = np.einsum("mk,mh->mkh", dlogits, hidden).reshape(m, -1)
    dpre = (dlogits @ w2) * (1.0 - hidden * hidden)
    dw1 = np.einsum("mh,md->mhd", dpre, x).reshape(m, -1)
    return np.concatenate([dw1, dpre, dw2, dlogits], axis=1)


def _check_features(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.spec.num_features:
        raise InvalidInputError(
            f"feature dimension {x.shape[-1]} does not match model d={model.spec.num_features}"
        )
    return x


# --- Construction ---


def init_model(
    kind: str,
    num_features: int,
    num_classes: int,
    hidden: int = 0,
    scale: float = 0.0,
    seed: int = 0,
) -> Model:
    """Zero parameters, or N(0, scale^2) entries when scale > 0."""
    spec = ModelSpec(kind, num_features, num_classes, hidden)
    if scale <= 0.0:
        return Model(spec, np.zeros(spec.num_params))
    rng = np.random.default_rng(seed)
    return Model(spec, scale * rng.standard_normal(spec.num_params))


def _mixture_means(
    num_classes: int, num_features: int, separation: float, rng: np.random.Generator
) -> np.ndarray:
    if num_classes <= num_features:
        q, _ = np.linalg.qr(rng.standard_normal((num_features, num_classes)))
        directions = q.T
    else:
        raw = rng.standard_normal((num_classes, num_features))
        directions = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return separation * directions


def _check_mixture_args(
    num_classes: int, num_features: int, n: int, separation: float, noise_rate: float
) -> None:
    if num_classes < 2 or num_features < 1 or n < num_classes:
        raise InvalidInputError(
            f"need K >= 2, d >= 1, n >= K; got K={num_classes}, d={num_features}, n={n}"
        )
    if separation < 0 or not np.isfinite(separation):
        raise InvalidInputError(f"class_separation must be >= 0, got {separation}")
    if not 0.0 <= noise_rate < 1.0:
        raise InvalidInputError(f"label_noise_rate must lie in [0, 1), got {noise_rate}")


def _sample_mixture(
    means: np.ndarray, n: int, noise_rate: float, rng: np.random.Generator
) -> Dataset:
    num_classes, num_features = means.shape
    components = rng.permutation(np.arange(n) % num_classes)
    features = means[components] + rng.standard_normal((n, num_features))
    labels = components.copy()
    flips = int(round(noise_rate * n))
    if flips:
        flipped = rng.choice(n, size=flips, replace=False)
        labels[flipped] = rng.integers(0, num_classes, size=flips)
    return Dataset(features, labels, num_classes)


def generate_gaussian_mixture(
    num_classes: int,
    num_features: int,
    n: int,
    class_separation: float,
    label_noise_rate: float,
    seed: int,
) -> Dataset:
    """Draw n points from K spherical unit-variance Gaussians.

    Component means have norm ``class_separation`` (orthogonal directions when
    K <= d). Components are balanced within one example, and a
    ``label_noise_rate`` fraction of labels is redrawn uniformly over K.
    """
    _check_mixture_args(num_classes, num_features, n, class_separation, label_noise_rate)
    rng = np.random.default_rng(seed)
    means = _mixture_means(num_classes, num_features, class_separation, rng)
    data = _sample_mixture(means, n, label_noise_rate, rng)
    logger.debug(
        "Generated mixture K=%d d=%d n=%d sep=%.3g noise=%.2f seed=%d",
        num_classes, num_features, n, class_separation, label_noise_rate, seed,
    )
    return data


def generate_train_test(
    num_classes: int,
    num_features: int,
    n: int,
    n_test: int,
    class_separation: float,
    label_noise_rate: float,
    seed: int,
) -> Tuple[Dataset, Dataset]:
    """Training set identical to generate_gaussian_mixture, plus a clean test set.

    The held-out points come from the same mixture means; their labels are
    the generating components (no label noise).
    """
    _check_mixture_args(num_classes, num_features, n, class_separation, label_noise_rate)
    if n_test < num_classes:
        raise InvalidInputError(f"n_test must be >= K, got {n_test}")
    rng = np.random.default_rng(seed)
    means = _mixture_means(num_classes, num_features, class_separation, rng)
    train = _sample_mixture(means, n, label_noise_rate, rng)
    test_rng = np.random.default_rng([seed, 1])
    test = _sample_mixture(means, n_test, 0.0, test_rng)
    return train, test


def split_dataset(data: Dataset, holdout: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Random (train, held-out) split; the held-out part gets round(holdout * n) examples."""
    if not 0.0 < holdout < 1.0:
        raise InvalidInputError(f"holdout must lie in (0, 1), got {holdout}")
    n_test = int(round(holdout * data.num_examples))
    if n_test < 1 or n_test >= data.num_examples:
        raise InvalidInputError(
            f"holdout {holdout} leaves an empty side for n={data.num_examples}"
        )
    order = np.random.default_rng(seed).permutation(data.num_examples)
    return data.subset(np.sort(order[n_test:])), data.subset(np.sort(order[:n_test]))


# --- Evaluation ---


def logits(model: Model, x: np.ndarray) -> Logits:
    """f(w; x) for one feature vector."""
    x = _check_features(model, x)
    if x.ndim != 1:
        raise InvalidInputError(f"expected one feature vector, got shape {x.shape}")
    z, _ = _forward(model.spec, model.params, x.reshape(1, -1))
    return Logits(z[0])


def batch_logits(model: Model, features: np.ndarray) -> np.ndarray:
    features = _check_features(model, features)
    z, _ = _forward(model.spec, model.params, features.reshape(-1, model.spec.num_features))
    return z


def _check_data(model: Model, data: Dataset) -> None:
    if data.num_features != model.spec.num_features or data.num_classes != model.spec.num_classes:
        raise InvalidInputError(
            f"dataset (d={data.num_features}, K={data.num_classes}) does not match model "
            f"(d={model.spec.num_features}, K={model.spec.num_classes})"
        )


def full_objective(model: Model, data: Dataset) -> float:
    """F(w): mean one-hot cross-entropy over the whole dataset."""
    _check_data(model, data)
    z, _ = _forward(model.spec, model.params, data.features)
    losses = logsumexp(z, axis=1) - z[np.arange(data.num_examples), data.labels]
    return float(np.sum(losses, dtype=np.longdouble) / data.num_examples)


def label_matrix(data: Dataset, mode: LabelMode) -> np.ndarray:
    """The (n, K) matrix of labels each example uses under ``mode``."""
    y = data.one_hot_matrix()
    if mode.kind == MODE_ONE_HOT:
        return y
    if mode.kind == MODE_SMOOTHED and mode.smoothing.theta == 0.0:
        return y
    hat = resolve_hat(mode.smoothing, data.num_classes, data.teacher_labels)
    hat = np.broadcast_to(hat, y.shape)
    if mode.kind == MODE_HAT_ONLY:
        return np.array(hat, dtype=float)
    return smooth_probs(y, hat, mode.smoothing.theta)


def example_gradients(
    model: Model,
    data: Dataset,
    labels: np.ndarray,
    indices: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-example gradients (m, p) of cross_entropy(labels[i], f(w; x_i))."""
    if indices is None:
        x, q = data.features, labels
    else:
        x, q = data.features[indices], labels[indices]
    z, hidden = _forward(model.spec, model.params, x)
    return _per_example_backward(
        model.spec, model.params, x, hidden, cross_entropy_grad_probs(q, z)
    )


def full_gradient(model: Model, data: Dataset) -> np.ndarray:
    """Exact gradient of F(w): mean of the one-hot per-example gradients.

    Rows are summed in index order, so the result is deterministic.
    """
    _check_data(model, data)
    grads = example_gradients(model, data, data.one_hot_matrix())
    return np.add.reduce(grads, axis=0) / data.num_examples


def stochastic_gradient(
    model: Model, data: Dataset, index: int, mode: LabelMode
) -> np.ndarray:
    """Gradient of the single-example loss under the given label mode."""
    _check_data(model, data)
    if not 0 <= index < data.num_examples:
        raise InvalidInputError(f"index {index} outside [0, {data.num_examples})")
    labels = label_matrix(data, mode)
    return example_gradients(model, data, labels, np.array([index]))[0]


def example_loss(model: Model, data: Dataset, index: int, mode: LabelMode) -> float:
    """The single-example loss whose gradient stochastic_gradient returns."""
    labels = label_matrix(data, mode)
    z, _ = _forward(model.spec, model.params, data.features[index : index + 1])
    return float(cross_entropy_probs(labels[index], z[0]))


def predict(model: Model, features: np.ndarray) -> np.ndarray:
    """Predicted class; ties go to the lowest index."""
    return np.argmax(batch_logits(model, features), axis=1)


def accuracy(model: Model, data: Dataset, top_k: int = 1) -> float:
    """Fraction of examples whose label is among the top-k logits."""
    _check_data(model, data)
    z, _ = _forward(model.spec, model.params, data.features)
    return _topk_accuracy(z, data.labels, top_k)


def _topk_accuracy(z: np.ndarray, labels: np.ndarray, top_k: int) -> float:
    if top_k == 1:
        return float(np.mean(np.argmax(z, axis=1) == labels))
    ranked = np.argsort(-z, axis=1, kind="stable")[:, :top_k]
    return float(np.mean(np.any(ranked == labels[:, None], axis=1)))


def fit_full_batch(model: Model, data: Dataset, eta: float, steps: int) -> Model:
    """Deterministic full-batch gradient descent; returns the final model."""
    if eta <= 0 or steps < 0:
        raise InvalidInputError(f"need eta > 0 and steps >= 0, got eta={eta} steps={steps}")
    params = np.array(model.params)
    current = model
    for step in range(steps):
        params = params - eta * full_gradient(current, data)
        current = model.with_params(params)
        if step % 1000 == 0:
            logger.debug("full-batch step %d: F=%.6g", step, full_objective(current, data))
    logger.info(
        "Full-batch fit: %d steps at eta=%.3g, F=%.6g, train acc=%.4f",
        steps, eta, full_objective(current, data), accuracy(current, data),
    )
    return current


def attach_teacher_labels(
    data: Dataset, teacher: Model, temperature: float = 1.0
) -> Dataset:
    """Store a teacher model's softmax predictions as per-example y_hat."""
    _check_data(teacher, data)
    if temperature <= 0:
        raise InvalidInputError(f"temperature must be > 0, got {temperature}")
    z = batch_logits(teacher, data.features) / temperature
    probs = np.stack([_label_softmax(row) for row in z])
    return Dataset(data.features, data.labels, data.num_classes, probs)


# --- Optimizer-facing oracle ---


class ClassificationOracle:
    """Wraps a model spec and dataset behind the optimizer's oracle interface.

    Parameter batches are (R, p) arrays, one row per replica.
    """

    kind = "classification"
    exact_gradient_every_step = False

    def __init__(
        self,
        spec: ModelSpec,
        data: Dataset,
        test_data: Optional[Dataset] = None,
        w0: Optional[np.ndarray] = None,
        batch_size: int = 1,
    ):
        if spec.num_features != data.num_features or spec.num_classes != data.num_classes:
            raise InvalidInputError("model spec does not match the dataset")
        if batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {batch_size}")
        self.spec = spec
        self.data = data
        self.test_data = test_data
        self.batch_size = batch_size
        self.w0 = np.zeros(spec.num_params) if w0 is None else np.asarray(w0, dtype=float)
        self._labels: Dict[Tuple, np.ndarray] = {}
        logger.info(
            "Classification oracle: %s d=%d K=%d n=%d p=%d batch=%d",
            spec.kind, spec.num_features, spec.num_classes,
            data.num_examples, spec.num_params, batch_size,
        )

    @property
    def dim(self) -> int:
        return self.spec.num_params

    @property
    def num_examples(self) -> int:
        return self.data.num_examples

    @property
    def default_eval_stride(self) -> int:
        return max(1, self.data.num_examples // self.batch_size)

    def model(self, params: np.ndarray) -> Model:
        return Model(self.spec, params)

    def objective(self, params: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(params)
        return np.array([full_objective(self.model(w), self.data) for w in rows])

    def gradient(self, params: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(params)
        return np.stack([full_gradient(self.model(w), self.data) for w in rows])

    def labels_for(self, mode: LabelMode) -> np.ndarray:
        smoothing = mode.smoothing
        key = (
            mode.kind,
            None if smoothing is None else smoothing.theta,
            None if smoothing is None else smoothing.source,
            None if smoothing is None or smoothing.fixed is None else smoothing.fixed.probs.tobytes(),
        )
        if key not in self._labels:
            self._labels[key] = label_matrix(self.data, mode)
        return self._labels[key]

    def example_gradients(self, params: np.ndarray, mode: LabelMode) -> np.ndarray:
        return example_gradients(self.model(params), self.data, self.labels_for(mode))

    def prepare_stage(self, smoothing: SmoothingSpec) -> np.ndarray:
        return self.labels_for(LabelMode.smoothed(smoothing))

    def sampler(self, seeds: Sequence[int]) -> "IndexSampler":
        return IndexSampler(seeds, self.data.num_examples, self.batch_size)

    def step_gradient(
        self,
        params: np.ndarray,
        exact_grad: Optional[np.ndarray],
        draws: np.ndarray,
        step: int,
        labels: np.ndarray,
    ) -> np.ndarray:
        """Mini-batch label-mode gradient for each replica at this step."""
        indices = draws[step]
        out = np.empty_like(params)
        for r in range(params.shape[0]):
            grads = example_gradients(self.model(params[r]), self.data, labels, indices[r])
            out[r] = np.add.reduce(grads, axis=0) / grads.shape[0]
        return out

    def evaluate(self, params: np.ndarray) -> Dict[str, np.ndarray]:
        """Held-out top-1 (and top-5 when K > 10) accuracy per replica."""
        if self.test_data is None:
            return {}
        rows = np.atleast_2d(params)
        top1, top5 = [], []
        for w in rows:
            z, _ = _forward(self.spec, w, self.test_data.features)
            top1.append(_topk_accuracy(z, self.test_data.labels, 1))
            if self.spec.num_classes > 10:
                top5.append(_topk_accuracy(z, self.test_data.labels, 5))
        out = {"accuracy": np.array(top1)}
        if top5:
            out["top5_accuracy"] = np.array(top5)
        return out


class IndexSampler:
    """Per-replica i.i.d. uniform example indices, drawn with replacement."""

    def __init__(self, seeds: Sequence[int], num_examples: int, batch_size: int):
        self.batch_size = batch_size
        self.streams: List[BufferedStream] = [
            BufferedStream(
                spawn_generators(seed)[STREAM_INDEX],
                lambda rng, size: rng.integers(0, num_examples, size=(size, batch_size)),
            )
            for seed in seeds
        ]

    def draw(self, count: int) -> np.ndarray:
        """Indices shaped (count, R, batch_size)."""
        return np.stack([stream.take(count) for stream in self.streams], axis=1)
