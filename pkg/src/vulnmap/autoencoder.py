"""Socioeconomic score from ordinal household variables.

Ordinal variables are thermometer-encoded and fed to a six-layer tanh
autoencoder with a one-unit bottleneck and a logistic output layer. Dropout
masks multiply the inputs of the first five layers during training; at
inference those inputs are scaled by the keep probability instead. Training
minimises the negative weighted Bernoulli log-likelihood with Adam on batches
resampled with replacement.

The score of a household is the bottleneck activation, with its sign fixed so
that higher scores go with higher ordinal codes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from .errors import DivergedLoss, InputError, MalformedRow, OutOfRangeValue, ShapeMismatch

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
MODEL_FORMAT = "vulnmap-autoencoder"
MODEL_VERSION = 1


@dataclass(frozen=True)
class OrdinalSchema:
    """Ordered ``(name, K)`` pairs; variable ``i`` takes codes ``1..K_i``."""

    variables: tuple[tuple[str, int], ...]

    def __post_init__(self):
        variables = tuple((str(n), int(k)) for n, k in self.variables)
        if not variables:
            raise InputError("schema has no variables")
        for name, k in variables:
            if k < 2:
                raise InputError(f"variable {name!r} needs K >= 2, got {k}")
        if len({n for n, _ in variables}) != len(variables):
            raise InputError("duplicate variable names in schema")
        object.__setattr__(self, "variables", variables)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.variables]

    @property
    def K(self) -> np.ndarray:
        return np.array([k for _, k in self.variables])

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def width(self) -> int:
        return int(np.sum(self.K - 1))

    def bit_variable(self) -> np.ndarray:
        """Variable index of each encoded bit."""
        return np.repeat(np.arange(self.n_variables), self.K - 1)

    def bit_threshold(self) -> np.ndarray:
        """Category ``k`` (2..K_i) that each encoded bit tests against."""
        return np.concatenate([np.arange(2, k + 1) for k in self.K])

    @classmethod
    def from_csv(cls, path) -> OrdinalSchema:
        rows = _read_csv_rows(path)
        try:
            return cls(tuple((r["variable"].strip(), int(r["K"])) for r in rows))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: bad schema: {exc}") from None


@dataclass(frozen=True)
class HouseholdRecord:
    household_id: str
    radio_id: str
    values: tuple[int, ...]


def _read_csv_rows(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def read_households(path, schema: OrdinalSchema) -> list[HouseholdRecord]:
    out = []
    for lineno, row in enumerate(_read_csv_rows(path), start=2):
        try:
            values = tuple(int(row[name]) for name in schema.names)
            out.append(HouseholdRecord(row["household_id"], row["radio_id"], values))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRow(path, lineno, f"bad household row: {exc}") from None
    return out


def _values_matrix(records, schema: OrdinalSchema) -> np.ndarray:
    if isinstance(records, np.ndarray):
        values = np.atleast_2d(records)
    else:
        values = np.array([r.values if isinstance(r, HouseholdRecord) else r for r in records])
        if values.size == 0:
            values = values.reshape(0, schema.n_variables)
    if values.ndim != 2 or values.shape[1] != schema.n_variables:
        raise ShapeMismatch(f"expected {schema.n_variables} variables, got {values.shape[1]}")
    bad = (values < 1) | (values > schema.K)
    if bad.any():
        j, i = np.argwhere(bad)[0]
        raise OutOfRangeValue(
            f"value {values[j, i]} out of range 1..{schema.K[i]} for {schema.names[i]!r}")
    return values


def thermometer_encode(record, schema: OrdinalSchema) -> np.ndarray:
    """Bit ``(i, k)`` is 1 iff ``v_i >= k``, for ``k = 2..K_i``.

    Accepts a single record (or sequence of codes) and returns a 1-D vector of
    width ``schema.width``.
    """
    return encode_matrix([record], schema)[0]


def encode_matrix(records, schema: OrdinalSchema) -> np.ndarray:
    values = _values_matrix(records, schema)
    return (values[:, schema.bit_variable()] >= schema.bit_threshold()).astype(float)


def thermometer_decode(bits: np.ndarray, schema: OrdinalSchema) -> np.ndarray:
    bits = np.atleast_2d(bits)
    out = np.empty((bits.shape[0], schema.n_variables), dtype=int)
    start = 0
    for i, k in enumerate(schema.K):
        group = bits[:, start:start + k - 1]
        out[:, i] = 1 + np.cumprod(group, axis=1).sum(axis=1)
        start += k - 1
    return out


def category_weights(schema: OrdinalSchema) -> np.ndarray:
    """Per-bit weight ``(1 / K_i) * (sum(K) / I)``, constant within a variable."""
    K = schema.K.astype(float)
    per_var = (1.0 / K) * (K.sum() / schema.n_variables)
    return per_var[schema.bit_variable()]


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

N_LAYERS = 6
N_DROPOUT = 5


@dataclass
class AutoencoderParams:
    """Weights ``W[l]`` of shape (out, in) and offsets ``b[l]`` for six layers."""

    W: list[np.ndarray]
    b: list[np.ndarray]
    dropout: float = 0.5
    orientation: float = 1.0

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.W[0].shape[1],) + tuple(w.shape[0] for w in self.W)

    def __post_init__(self):
        if len(self.W) != N_LAYERS or len(self.b) != N_LAYERS:
            raise ShapeMismatch("autoencoder needs exactly six layers")
        widths = self.widths
        if widths[3] != 1:
            raise ShapeMismatch("bottleneck width must be 1")
        if widths[0] != widths[-1]:
            raise ShapeMismatch("input and output widths differ")
        for l in range(N_LAYERS):
            if self.W[l].shape != (widths[l + 1], widths[l]) or self.b[l].shape != (widths[l + 1],):
                raise ShapeMismatch(f"layer {l + 1} has inconsistent shapes")

    @classmethod
    def init(cls, width: int, hidden=(16, 8, 8, 16), dropout: float = 0.5,
             rng: np.random.Generator | None = None) -> AutoencoderParams:
        """Glorot-uniform weights and zero offsets for widths (D, h1, h2, 1, h4, h5, D)."""
        rng = np.random.default_rng(rng)
        d1, d2, d4, d5 = hidden
        widths = (width, d1, d2, 1, d4, d5, width)
        W, b = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            W.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            b.append(np.zeros(fan_out))
        return cls(W, b, dropout)

    def copy(self) -> AutoencoderParams:
        return AutoencoderParams([w.copy() for w in self.W], [v.copy() for v in self.b],
                                 self.dropout, self.orientation)

    def tensors(self) -> list[np.ndarray]:
        return [*self.W, *self.b]


def sample_masks(params: AutoencoderParams, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One Bernoulli keep-mask per dropout layer, shape (n, layer input width)."""
    keep = 1.0 - params.dropout
    return [(rng.random((n, width)) < keep).astype(float) for width in params.widths[:N_DROPOUT]]


def _forward(params, X, masks):
    keep = 1.0 - params.dropout
    acts = []      # inputs to each layer after dropout / scaling
    hs = []
    h = X
    for l in range(N_LAYERS):
        if l < N_DROPOUT:
            a = h * masks[l] if masks is not None else h * keep
        else:
            a = h
        acts.append(a)
        z = a @ params.W[l].T + params.b[l]
        h = np.tanh(z) if l < N_LAYERS - 1 else 1.0 / (1.0 + np.exp(-z))
        hs.append(h)
    return acts, hs


def forward(params: AutoencoderParams, x: np.ndarray, masks: Sequence[np.ndarray] | None = None
            ) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction probabilities and raw bottleneck value(s).

    ``x`` is one encoded vector or a matrix of them. Without ``masks`` the
    network runs in inference mode.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != params.widths[0]:
        raise ShapeMismatch(f"input width {X.shape[1]} != model width {params.widths[0]}")
    if masks is not None:
        if len(masks) != N_DROPOUT:
            raise ShapeMismatch("expected five dropout masks")
        masks = [np.atleast_2d(m) for m in masks]
    _, hs = _forward(params, X, masks)
    x_hat, s = hs[-1], hs[2][:, 0]
    return (x_hat[0], s[0]) if single else (x_hat, s)


def weighted_loglik(x_hat: np.ndarray, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted Bernoulli log-likelihood per case (summed over bits).

    ``x_hat`` is clamped to ``[1e-7, 1 - 1e-7]`` before taking logs.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if x_hat.shape != x.shape or x.shape[-1] != weights.shape[-1]:
        raise ShapeMismatch(f"shapes {x_hat.shape}, {x.shape}, {weights.shape} disagree")
    p = np.clip(x_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return np.sum(weights * (x * np.log(p) + (1.0 - x) * np.log1p(-p)), axis=-1)


def loss_and_grads(params: AutoencoderParams, X: np.ndarray, weights: np.ndarray,
                   masks: Sequence[np.ndarray] | None):
    """Mean negative weighted log-likelihood over the batch and its gradients.

    Gradients are returned in :meth:`AutoencoderParams.tensors` order. The
    output clamp is treated as inactive for the gradient.
    """
    n = X.shape[0]
    acts, hs = _forward(params, X, masks)
    loss = -float(np.mean(weighted_loglik(hs[-1], X, weights)))
    gW = [None] * N_LAYERS
    gb = [None] * N_LAYERS
    delta = weights * (hs[-1] - X) / n
    for l in range(N_LAYERS - 1, -1, -1):
        gW[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l == 0:
            break
        da = delta @ params.W[l]
        dh = da * masks[l] if (masks is not None and l < N_DROPOUT) else (
            da * (1.0 - params.dropout) if l < N_DROPOUT else da)
        delta = dh * (1.0 - hs[l - 1] ** 2)
    return loss, gW + gb


@dataclass
class TrainConfig:
    seed: int = 0
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    early_stop_tol: float = 1e-7
    early_stop_patience: int = 5
    hidden: tuple[int, int, int, int] = (16, 8, 8, 16)
    dropout: float = 0.5

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if len(self.hidden) != 4 or min(self.hidden) < 1:
            raise ValueError("hidden must be four positive widths")
        for name in ("learning_rate", "batch_size", "epochs", "beta1", "beta2", "epsilon",
                     "early_stop_tol", "early_stop_patience"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam decay rates must lie in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


class Adam:
    def __init__(self, tensors: list[np.ndarray], lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(t) for t in tensors]
        self.v = [np.zeros_like(t) for t in tensors]
        self.t = 0

    def step(self, tensors: list[np.ndarray], grads: list[np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: AutoencoderParams
    epoch_loss: list[float] = field(default_factory=list)
    stopped_early: bool = False


MIN_TRAIN_RECORDS = 100


def train(records, schema: OrdinalSchema, config: TrainConfig | None = None) -> TrainResult:
    """Fit the autoencoder; bit-reproducible for a fixed ``config.seed``.

    Each epoch draws ``ceil(N / batch_size)`` batches with replacement. The
    returned log holds the mean per-case loss of every epoch.
    """
    config = config or TrainConfig()
    values = _values_matrix(records, schema)
    if values.shape[0] < MIN_TRAIN_RECORDS:
        raise InputError(f"need at least {MIN_TRAIN_RECORDS} records, got {values.shape[0]}")
    X = encode_matrix(values, schema)
    weights = category_weights(schema)
    rng = np.random.default_rng(config.seed)
    params = AutoencoderParams.init(schema.width, config.hidden, config.dropout, rng)
    tensors = params.tensors()
    opt = Adam(tensors, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    n = X.shape[0]
    n_batches = math.ceil(n / config.batch_size)
    result = TrainResult(params)
    flat = 0
    for epoch in range(config.epochs):
        total = 0.0
        for _ in range(n_batches):
            idx = rng.integers(0, n, size=config.batch_size)
            batch = X[idx]
            masks = sample_masks(params, config.batch_size, rng)
            loss, grads = loss_and_grads(params, batch, weights, masks)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise DivergedLoss(f"non-finite loss at epoch {epoch + 1}")
            opt.step(tensors, grads)
            total += loss
        mean_loss = total / n_batches
        log.debug("epoch %d loss %.6f", epoch + 1, mean_loss)
        prev = result.epoch_loss[-1] if result.epoch_loss else None
        result.epoch_loss.append(mean_loss)
        if prev is not None and abs(prev - mean_loss) <= config.early_stop_tol * abs(prev):
            flat += 1
            if flat >= config.early_stop_patience:
                result.stopped_early = True
                break
        else:
            flat = 0
    params.orientation = orientation_sign(params, values, schema)
    return result


def orientation_sign(params: AutoencoderParams, values: np.ndarray, schema: OrdinalSchema) -> float:
    """+1 or -1 so that oriented scores correlate positively with summed codes."""
    _, s = forward(params, encode_matrix(values, schema))
    rho = spearmanr(s, values.sum(axis=1)).statistic
    return -1.0 if (np.isfinite(rho) and rho < 0) else 1.0


def score(params: AutoencoderParams, records, schema: OrdinalSchema) -> np.ndarray | float:
    """Oriented bottleneck activation in inference mode.

    A single :class:`HouseholdRecord` gives a float; a sequence gives an array.
    """
    single = isinstance(records, HouseholdRecord)
    X = encode_matrix([records] if single else records, schema)
    _, s = forward(params, X)
    s = params.orientation * np.atleast_1d(s)
    return float(s[0]) if single else s


def error_metric(params: AutoencoderParams, records, schema: OrdinalSchema,
                 x_hat: np.ndarray | None = None) -> float:
    """Mean over cases of the per-bit likelihood ``exp(x log x̂ + (1-x) log(1-x̂))``,
    each term weighted by ``1 / sum(K)``.

    The maximum attainable value is ``sum(K_i - 1) / sum(K)``. ``x_hat`` may be
    supplied to evaluate a given reconstruction instead of the model's.
    """
    X = encode_matrix(records, schema)
    if x_hat is None:
        x_hat, _ = forward(params, X)
    x_hat = np.atleast_2d(x_hat)
    p = np.clip(x_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = np.exp(X * np.log(p) + (1.0 - X) * np.log1p(-p)) / schema.K.sum()
    return float(terms.sum(axis=1).mean())


def error_metric_max(schema: OrdinalSchema) -> float:
    return float((schema.K - 1).sum() / schema.K.sum())


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_model(path, params: AutoencoderParams, schema: OrdinalSchema):
    """Write a JSON model file (layout documented in the README)."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "schema": [[n, k] for n, k in schema.variables],
        "widths": list(params.widths),
        "dropout": params.dropout,
        "orientation": params.orientation,
        "layers": [{"W": w.tolist(), "b": b.tolist()} for w, b in zip(params.W, params.b)],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path) -> tuple[AutoencoderParams, OrdinalSchema]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a model file: {exc}") from None
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise InputError(f"{path}: unsupported model format/version")
    schema = OrdinalSchema(tuple((n, k) for n, k in doc["schema"]))
    params = AutoencoderParams(
        [np.array(layer["W"], dtype=float).reshape(o, i)
         for layer, i, o in zip(doc["layers"], doc["widths"][:-1], doc["widths"][1:])],
        [np.array(layer["b"], dtype=float) for layer in doc["layers"]],
        float(doc["dropout"]), float(doc["orientation"]))
    return params, schema


def write_scores(path, records: Sequence[HouseholdRecord], scores: np.ndarray,
                 header_lines: Sequence[str] = ()):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["household_id", "radio_id", "s"])
        for rec, s in zip(records, scores):
            writer.writerow([rec.household_id, rec.radio_id, repr(float(s))])


def read_scores(path) -> list[tuple[str, str, float]]:
    out = []
    for lineno, row in enumerate(_read_csv_rows(path), start=2):
        try:
            out.append((row["household_id"], row["radio_id"], float(row["s"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRow(path, lineno, str(exc)) from None
    return out


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["hidden"] = list(config.hidden)
    return d
