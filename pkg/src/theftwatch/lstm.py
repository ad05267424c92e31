"""LSTM prediction unit, written directly on numpy.

One LSTM layer (64 units by default, scalar kWh input) feeds a single
sigmoid unit at every timestep, so a window of T readings yields T theft
probabilities. A window is flagged when its maximum probability reaches the
decision threshold.

Gate columns are stacked in the order input, forget, output, candidate so
the three sigmoid gates are one contiguous slice.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import FormatError, NumericError, UsageError

HIDDEN_SIZE = 64
INPUT_SIZE = 1
WINDOW_LEN = 72
DEFAULT_DECISION_THRESHOLD = 0.5
INFERENCE_CHUNK = 4096

PARAM_NAMES = ("Wx", "Wh", "b", "w_out", "b_out")
GATES = ("input", "forget", "output", "candidate")


def sigmoid(x):
    """Two-branch logistic; never evaluates exp of a positive argument."""
    x = np.asarray(x, dtype=np.float64)
    e = np.abs(x)
    np.negative(e, out=e)
    np.exp(e, out=e)
    r = e + 1.0
    np.reciprocal(r, out=r)
    # r = sigmoid(|x|); for x < 0 the result is e / (1 + e)
    np.multiply(e, r, out=r, where=x < 0)
    return r


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass(eq=False)
class LstmModel:
    Wx: np.ndarray  # (input, 4H)
    Wh: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)
    w_out: np.ndarray  # (H,)
    b_out: np.ndarray  # (1,)
    decision_threshold: float = DEFAULT_DECISION_THRESHOLD
    window_len: int = WINDOW_LEN

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        self.b_out = self.b_out.reshape(1)
        H = self.hidden_size
        expected = {"Wx": (self.input_size, 4 * H), "Wh": (H, 4 * H), "b": (4 * H,), "w_out": (H,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise UsageError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not 0.0 < self.decision_threshold < 1.0:
            raise UsageError(f"decision_threshold must be in (0, 1), got {self.decision_threshold}")
        if not all(np.all(np.isfinite(p)) for p in self.params().values()):
            raise NumericError("model parameters contain non-finite values")

    @property
    def hidden_size(self) -> int:
        return self.Wh.shape[0]

    @property
    def input_size(self) -> int:
        return self.Wx.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(input weights, recurrent weights, bias) for one named gate."""
        if name not in GATES:
            raise UsageError(f"unknown gate {name!r}; expected one of {GATES}")
        k = GATES.index(name)
        sl = slice(k * self.hidden_size, (k + 1) * self.hidden_size)
        return self.Wx[:, sl], self.Wh[:, sl], self.b[sl]

    def copy(self) -> "LstmModel":
        return LstmModel(
            **{k: v.copy() for k, v in self.params().items()},
            decision_threshold=self.decision_threshold,
            window_len=self.window_len,
        )

    def __eq__(self, other):
        if not isinstance(other, LstmModel):
            return NotImplemented
        return (
            self.decision_threshold == other.decision_threshold
            and self.window_len == other.window_len
            and all(np.array_equal(a, b) for a, b in zip(self.params().values(), other.params().values()))
        )


def init_model(
    hidden_size: int = HIDDEN_SIZE,
    seed: int = 0,
    decision_threshold: float = DEFAULT_DECISION_THRESHOLD,
    window_len: int = WINDOW_LEN,
) -> LstmModel:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases except forget gate = 1."""
    rng = np.random.default_rng(seed)
    H, I = hidden_size, INPUT_SIZE
    Wx = rng.uniform(-1, 1, (I, 4 * H)) / np.sqrt(I)
    Wh = rng.uniform(-1, 1, (H, 4 * H)) / np.sqrt(H)
    w_out = rng.uniform(-1, 1, H) / np.sqrt(H)
    b = np.zeros(4 * H)
    b[H : 2 * H] = 1.0
    return LstmModel(Wx, Wh, b, w_out, np.zeros(1), decision_threshold, window_len)


def zero_model(hidden_size: int = HIDDEN_SIZE, **kw) -> LstmModel:
    H = hidden_size
    return LstmModel(np.zeros((INPUT_SIZE, 4 * H)), np.zeros((H, 4 * H)), np.zeros(4 * H), np.zeros(H), np.zeros(1), **kw)


@dataclass
class Window:
    values: np.ndarray
    meter_id: str = ""
    end_hour: int = -1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise UsageError(f"window for {self.meter_id!r} must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise UsageError(f"window for {self.meter_id!r} has negative or non-finite readings")

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class Detection:
    meter_id: str
    outcome: int
    confidence: float
    argmax: int
    end_hour: int = -1


def _step(model, x_t, h, c):
    H = model.hidden_size
    z = x_t @ model.Wx + h @ model.Wh + model.b
    s = sigmoid(z[:, : 3 * H])
    i, f, o = s[:, :H], s[:, H : 2 * H], s[:, 2 * H :]
    g = np.tanh(z[:, 3 * H :])
    c = f * c + i * g
    tc = np.tanh(c)
    return i, f, o, g, c, tc, o * tc


def forward_logits(model: LstmModel, X: np.ndarray) -> np.ndarray:
    """Pre-sigmoid head outputs, shape (B, T), for a (B, T) batch of readings."""
    X = np.asarray(X, dtype=np.float64)
    B, T = X.shape
    H = model.hidden_size
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = np.empty((B, T))
    for t in range(T):
        *_, c, _, h = _step(model, X[:, t : t + 1], h, c)
        out[:, t] = h @ model.w_out + model.b_out[0]
    return out


def forward_batch(model: LstmModel, X: np.ndarray, chunk: int = INFERENCE_CHUNK) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise UsageError(f"expected a (batch, time) array, got shape {X.shape}")
    parts = []
    with np.errstate(over="ignore", invalid="ignore"):
        for lo in range(0, X.shape[0], chunk):
            parts.append(sigmoid(forward_logits(model, X[lo : lo + chunk])))
    probs = np.concatenate(parts) if parts else np.empty((0, X.shape[1]))
    bad = ~np.all(np.isfinite(probs), axis=1)
    if bad.any():
        err = NumericError(f"non-finite output for batch rows {np.flatnonzero(bad).tolist()}")
        err.rows = np.flatnonzero(bad).tolist()
        raise err
    return probs


def lstm_forward(model: LstmModel, window) -> np.ndarray:
    values = window.values if isinstance(window, Window) else np.asarray(window, dtype=np.float64)
    try:
        return forward_batch(model, values[None, :])[0]
    except NumericError:
        name = window.meter_id if isinstance(window, Window) else "<window>"
        raise NumericError(f"non-finite forward pass for meter {name}") from None


def classify(probs, threshold: float = DEFAULT_DECISION_THRESHOLD) -> tuple[int, float, int]:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        raise UsageError("cannot classify an empty probability sequence")
    if np.any(~(probs >= 0) | ~(probs <= 1)):
        raise UsageError("probabilities must lie in [0, 1]")
    k = int(np.argmax(probs))
    confidence = float(probs[k])
    return int(confidence >= threshold), confidence, k


def predict_batch(model: LstmModel, windows: Sequence[Window]) -> list[Detection]:
    if not windows:
        return []
    lengths = {len(w) for w in windows}
    if len(lengths) != 1:
        raise UsageError(f"windows in a batch must share one length, got {sorted(lengths)}")
    X = np.stack([w.values for w in windows])
    try:
        probs = forward_batch(model, X)
    except NumericError as exc:
        raise NumericError(
            "non-finite forward pass for meters " + ", ".join(windows[r].meter_id for r in exc.rows)
        ) from None
    out = []
    for w, p in zip(windows, probs):
        outcome, confidence, k = classify(p, model.decision_threshold)
        out.append(Detection(w.meter_id, outcome, confidence, k, w.end_hour))
    return out


def loss_and_grads(model: LstmModel, X, Y, dropout: float = 0.0, rng=None):
    """Mean per-timestep binary cross-entropy and its gradient by BPTT.

    Inverted dropout is applied to the hidden sequence before the head when
    ``dropout > 0`` (``rng`` then supplies the masks).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    B, T = X.shape
    H = model.hidden_size
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    logits = np.empty((B, T))
    if dropout > 0:
        keep = 1.0 - dropout
        masks = (rng.random((T, B, H)) < keep) / keep
    else:
        masks = None
    for t in range(T):
        x_t = X[:, t : t + 1]
        h_prev, c_prev = h, c
        i, f, o, g, c, tc, h = _step(model, x_t, h, c)
        hd = h * masks[t] if masks is not None else h
        logits[:, t] = hd @ model.w_out + model.b_out[0]
        cache.append((x_t, h_prev, c_prev, i, f, o, g, tc, hd))

    loss = float(np.mean(softplus(logits) - Y * logits))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    da = (sigmoid(logits) - Y) / (B * T)

    grads = {k: np.zeros_like(v) for k, v in model.params().items()}
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(T)):
        x_t, h_prev, c_prev, i, f, o, g, tc, hd = cache[t]
        a_t = da[:, t]
        grads["w_out"] += hd.T @ a_t
        grads["b_out"][0] += a_t.sum()
        dh = np.outer(a_t, model.w_out)
        if masks is not None:
            dh *= masks[t]
        dh += dh_next
        dc = dh * o * (1 - tc * tc) + dc_next
        dz = np.concatenate(
            [dc * g * i * (1 - i), dc * c_prev * f * (1 - f), dh * tc * o * (1 - o), dc * i * (1 - g * g)],
            axis=1,
        )
        grads["Wx"] += x_t.T @ dz
        grads["Wh"] += h_prev.T @ dz
        grads["b"] += dz.sum(axis=0)
        dh_next = dz @ model.Wh.T
        dc_next = dc * f
    return loss, grads


def gradient_check(model: LstmModel, window, labels, epsilon: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between BPTT and central differences over all parameters.

    Relative error is ``|a - n| / max(|a| + |n|, floor)``. The floor (1e-6)
    sits far above central-difference round-off (~1e-11 for unit-scale
    losses), so near-zero gradients compare absolutely instead of dividing
    round-off by zero.
    """
    values = window.values if isinstance(window, Window) else window
    X = np.asarray(values, dtype=np.float64)[None, :]
    Y = np.asarray(labels, dtype=np.float64)[None, :]
    _, analytic = loss_and_grads(model, X, Y)
    probe = model.copy()
    worst = 0.0
    for name, param in probe.params().items():
        flat = param.reshape(-1)
        grad = analytic[name].reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + epsilon
            up, _ = loss_and_grads(probe, X, Y)
            flat[k] = saved - epsilon
            down, _ = loss_and_grads(probe, X, Y)
            flat[k] = saved
            numeric = (up - down) / (2 * epsilon)
            err = abs(grad[k] - numeric) / max(abs(grad[k]) + abs(numeric), floor)
            worst = max(worst, err)
    return worst


@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-3
    dropout: float = 0.5
    batch_size: int = 32  # 0 means full batch
    seed: int = 0
    optimizer: str = "adam"
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0:
            raise UsageError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise UsageError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 0:
            raise UsageError("epochs and batch_size must be non-negative")


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGD:
    def __init__(self, params, lr=1e-2):
        self.lr = lr

    def step(self, params, grads):
        for k, p in params.items():
            p -= self.lr * grads[k]


def train(model: LstmModel, X, Y, cfg: TrainConfig | None = None) -> tuple[LstmModel, list[float]]:
    """Fit on (N, T) readings ``X`` with (N, T) tamper labels ``Y``.

    Returns a new model and the per-epoch mean training loss. The input
    model is not modified.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise UsageError("training set is empty")
    if X.shape != Y.shape:
        raise UsageError(f"readings {X.shape} and labels {Y.shape} differ in shape")
    model = model.copy()
    params = model.params()
    opt = Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else SGD(params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    N = X.shape[0]
    bs = cfg.batch_size or N
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        total = 0.0
        for lo in range(0, N, bs):
            idx = order[lo : lo + bs]
            try:
                loss, grads = loss_and_grads(model, X[idx], Y[idx], cfg.dropout, rng)
            except NumericError:
                raise NumericError(f"non-finite loss in epoch {epoch}") from None
            if cfg.clip_norm:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > cfg.clip_norm:
                    for g in grads.values():
                        g *= cfg.clip_norm / norm
            opt.step(params, grads)
            total += loss * len(idx)
        trace.append(total / N)
    if not all(np.all(np.isfinite(p)) for p in params.values()):
        raise NumericError("training produced non-finite parameters")
    return model, trace


_MAGIC = b"TWLSTM\x00\x01"
_VERSION = 1
_HEADER = struct.Struct("<8sIIIId")


def save_weights(model: LstmModel, path) -> None:
    """Little-endian: magic, version, hidden, input, window_len, threshold, then
    Wx, Wh, b, w_out, b_out as row-major float64."""
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                _MAGIC, _VERSION, model.hidden_size, model.input_size, model.window_len, model.decision_threshold
            )
        )
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(getattr(model, name), dtype="<f8").tobytes())


def load_weights(path, expected_hidden: int | None = HIDDEN_SIZE) -> LstmModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, H, I, window_len, threshold = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise FormatError(f"{path}: not a weight file (bad magic)")
    if version != _VERSION:
        raise FormatError(f"{path}: format version {version}, expected {_VERSION}")
    if expected_hidden is not None and H != expected_hidden:
        raise FormatError(f"{path}: hidden size {H} does not match expected {expected_hidden}")
    shapes = {"Wx": (I, 4 * H), "Wh": (H, 4 * H), "b": (4 * H,), "w_out": (H,), "b_out": (1,)}
    need = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(blob) != need:
        raise FormatError(f"{path}: {len(blob)} bytes, expected {need} (truncated or padded)")
    offset = _HEADER.size
    tensors = {}
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    try:
        return LstmModel(**tensors, decision_threshold=threshold, window_len=window_len)
    except (UsageError, NumericError) as exc:
        raise FormatError(f"{path}: {exc}") from None
