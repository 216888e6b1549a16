"""From-scratch bidirectional LSTM sequence regressor.

Two stacked BLSTM layers (40 and 30 units per direction by default) feed a
linear per-frame output. Training follows the fixed recipe: standardize
features and targets with training-set statistics, add Gaussian noise to
the training inputs, minimize the sum of squared frame errors by plain
gradient descent with one full-sequence BPTT step per subject sequence in
fixed order, and early-stop on validation SSE. Everything is float64 and
deterministic for a fixed seed.

Per-frame SSE values reported to users are mean squared error on the
standardized target scale, so magnitudes are comparable across corpus
sizes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import DivergenceError

log = logging.getLogger(__name__)

DEFAULT_SEED = 1787452436
INIT_SCALE = 0.1
FORGET_BIAS = 1.0


@dataclass(frozen=True)
class ModelConfig:
    hidden_sizes: tuple = (40, 30)
    learning_rate: float = 1e-5
    input_noise_sd: float = 0.1
    max_epochs: int = 100
    patience_epochs: int = 10
    seed: int = DEFAULT_SEED
    momentum: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes or any(h <= 0 for h in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be positive: {self.hidden_sizes}")
        if self.learning_rate <= 0 or self.max_epochs <= 0 or self.patience_epochs <= 0:
            raise ValueError("learning rate, max epochs and patience must be positive")
        if self.input_noise_sd < 0:
            raise ValueError("input noise sd must be >= 0")
        if self.patience_epochs > self.max_epochs:
            raise ValueError("patience cannot exceed max epochs")


@dataclass(frozen=True)
class SubjectSequence:
    """One subject's aligned (features, targets) pair at 25 Hz."""

    subject: str
    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.targets.ndim != 1:
            raise ValueError("features must be (frames, width), targets (frames,)")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"{self.subject}: {self.features.shape[0]} feature rows vs "
                f"{self.targets.shape[0]} targets"
            )


@dataclass(frozen=True)
class Standardizer:
    """Train-set feature/target location and scale (population moments).

    Zero-variance columns get scale 1 and are flagged, so their
    standardized values are exactly 0.
    """

    feature_mean: np.ndarray
    feature_sd: np.ndarray
    feature_degenerate: np.ndarray
    target_mean: float
    target_sd: float
    target_degenerate: bool

    def apply_features(self, matrix: np.ndarray) -> np.ndarray:
        return (matrix - self.feature_mean) / self.feature_sd

    def apply_targets(self, targets: np.ndarray) -> np.ndarray:
        return (targets - self.target_mean) / self.target_sd

    def invert_targets(self, standardized: np.ndarray) -> np.ndarray:
        return standardized * self.target_sd + self.target_mean


SD_EPS = 1e-12


def fit_standardizer(train_matrix: np.ndarray, train_targets: np.ndarray) -> Standardizer:
    train_matrix = np.asarray(train_matrix, dtype=np.float64)
    train_targets = np.asarray(train_targets, dtype=np.float64)
    if train_matrix.size == 0:
        raise ValueError("empty training matrix")
    mean = train_matrix.mean(axis=0)
    sd = train_matrix.std(axis=0)
    degenerate = sd < SD_EPS
    if degenerate.any():
        log.debug("standardizer: %d zero-variance feature columns", int(degenerate.sum()))
    sd = np.where(degenerate, 1.0, sd)
    t_mean = float(train_targets.mean())
    t_sd = float(train_targets.std())
    t_degenerate = t_sd < SD_EPS
    return Standardizer(
        feature_mean=mean,
        feature_sd=sd,
        feature_degenerate=degenerate,
        target_mean=t_mean,
        target_sd=1.0 if t_degenerate else t_sd,
        target_degenerate=bool(t_degenerate),
    )


def add_noise(matrix: np.ndarray, sd: float, rng: np.random.Generator) -> np.ndarray:
    """Independent N(0, sd^2) per cell; sd 0 returns the input unchanged."""
    if sd == 0.0:
        return matrix
    return matrix + rng.normal(0.0, sd, size=matrix.shape)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form: stable for large |z| and a single ufunc call
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class BLSTMCore:
    """Stacked bidirectional LSTM with a linear scalar head.

    Parameters live in a flat name -> array dict. Gate order is
    (input, forget, output, candidate) so the three sigmoid gates form one
    contiguous block; forget biases start at 1.
    """

    def __init__(self, input_dim: int, hidden_sizes, rng: np.random.Generator):
        self.input_dim = int(input_dim)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.params = {}
        d_in = self.input_dim
        for li, h in enumerate(self.hidden_sizes):
            for direction in ("fwd", "bwd"):
                prefix = f"layer{li}.{direction}"
                self.params[f"{prefix}.W_x"] = rng.uniform(-INIT_SCALE, INIT_SCALE, (d_in, 4 * h))
                self.params[f"{prefix}.W_h"] = rng.uniform(-INIT_SCALE, INIT_SCALE, (h, 4 * h))
                b = rng.uniform(-INIT_SCALE, INIT_SCALE, 4 * h)
                b[h : 2 * h] = FORGET_BIAS
                self.params[f"{prefix}.b"] = b
            d_in = 2 * h
        self.params["out.w"] = rng.uniform(-INIT_SCALE, INIT_SCALE, d_in)
        self.params["out.b"] = np.array(rng.uniform(-INIT_SCALE, INIT_SCALE))

    def _direction_forward(self, X: np.ndarray, prefix: str, reverse: bool):
        W_x = self.params[f"{prefix}.W_x"]
        W_h = self.params[f"{prefix}.W_h"]
        b = self.params[f"{prefix}.b"]
        T = X.shape[0]
        H = W_h.shape[0]
        Z = X @ W_x + b
        gates = np.empty((T, 4 * H))
        C = np.empty((T, H))
        TC = np.empty((T, H))
        Hs = np.empty((T, H))
        tmp = np.empty(H)
        h_prev = np.zeros(H)
        c_prev = np.zeros(H)
        order = range(T - 1, -1, -1) if reverse else range(T)
        for t in order:
            z = gates[t]
            np.dot(h_prev, W_h, out=z)
            z += Z[t]
            # sigmoid(v) = 0.5 * (1 + tanh(v / 2)) on the i/f/o block,
            # plain tanh on the candidate block, in one tanh call
            z[: 3 * H] *= 0.5
            np.tanh(z, out=z)
            z[: 3 * H] += 1.0
            z[: 3 * H] *= 0.5
            c = C[t]
            np.multiply(z[H : 2 * H], c_prev, out=c)
            np.multiply(z[:H], z[3 * H :], out=tmp)
            c += tmp
            tc = TC[t]
            np.tanh(c, out=tc)
            h = Hs[t]
            np.multiply(tc, z[2 * H : 3 * H], out=h)
            h_prev, c_prev = h, c
        return Hs, {"X": X, "gates": gates, "C": C, "TC": TC, "H": Hs, "reverse": reverse}

    def _direction_backward(self, cache: dict, dH_out: np.ndarray, prefix: str):
        W_x = self.params[f"{prefix}.W_x"]
        W_h = self.params[f"{prefix}.W_h"]
        X, gates, C, TC = cache["X"], cache["gates"], cache["C"], cache["TC"]
        reverse = cache["reverse"]
        T, H = C.shape
        W_hT = np.ascontiguousarray(W_h.T)
        dZ = np.empty((T, 4 * H))
        dh = np.empty(H)
        dc = np.empty(H)
        dc_rec = np.zeros(H)
        dh_rec = np.zeros(H)
        tmp = np.empty(H)
        zero = np.zeros(H)
        order = range(T) if reverse else range(T - 1, -1, -1)
        for t in order:
            z = gates[t]
            i, f, o, g = z[:H], z[H : 2 * H], z[2 * H : 3 * H], z[3 * H :]
            tc = TC[t]
            np.add(dH_out[t], dh_rec, out=dh)
            # dc = dh * o * (1 - tc^2) + dc_rec
            np.multiply(tc, tc, out=dc)
            np.subtract(1.0, dc, out=dc)
            dc *= o
            dc *= dh
            dc += dc_rec
            if reverse:
                c_prev = C[t + 1] if t + 1 < T else zero
            else:
                c_prev = C[t - 1] if t > 0 else zero
            dz = dZ[t]
            d_i, d_f, d_o, d_g = dz[:H], dz[H : 2 * H], dz[2 * H : 3 * H], dz[3 * H :]
            # sigmoid gates: dsig = s * (1 - s); candidate: 1 - g^2
            np.multiply(dc, g, out=d_i)
            np.subtract(1.0, i, out=tmp)
            tmp *= i
            d_i *= tmp
            np.multiply(dc, c_prev, out=d_f)
            np.subtract(1.0, f, out=tmp)
            tmp *= f
            d_f *= tmp
            np.multiply(dh, tc, out=d_o)
            np.subtract(1.0, o, out=tmp)
            tmp *= o
            d_o *= tmp
            np.multiply(dc, i, out=d_g)
            np.multiply(g, g, out=tmp)
            np.subtract(1.0, tmp, out=tmp)
            d_g *= tmp
            np.multiply(dc, f, out=dc_rec)
            np.dot(dz, W_hT, out=dh_rec)
        Hs = cache["H"]
        H_prev = np.zeros_like(Hs)
        if reverse:
            H_prev[:-1] = Hs[1:]
        else:
            H_prev[1:] = Hs[:-1]
        grads = {
            f"{prefix}.W_x": X.T @ dZ,
            f"{prefix}.W_h": H_prev.T @ dZ,
            f"{prefix}.b": dZ.sum(axis=0),
        }
        dX = dZ @ W_x.T
        return grads, dX

    def forward(self, X: np.ndarray):
        """Per-frame predictions and the cache needed for backward."""
        if X.shape[1] != self.input_dim:
            raise ValueError(f"feature width {X.shape[1]} != model input {self.input_dim}")
        caches = []
        current = X
        for li in range(len(self.hidden_sizes)):
            h_fwd, cache_fwd = self._direction_forward(current, f"layer{li}.fwd", False)
            h_bwd, cache_bwd = self._direction_forward(current, f"layer{li}.bwd", True)
            caches.append((cache_fwd, cache_bwd))
            current = np.concatenate([h_fwd, h_bwd], axis=1)
        y_hat = current @ self.params["out.w"] + self.params["out.b"]
        return y_hat, {"layers": caches, "top": current}

    def backward(self, cache: dict, d_yhat: np.ndarray) -> dict:
        grads = {
            "out.w": cache["top"].T @ d_yhat,
            "out.b": np.array(d_yhat.sum()),
        }
        d_current = np.outer(d_yhat, self.params["out.w"])
        for li in range(len(self.hidden_sizes) - 1, -1, -1):
            h = self.hidden_sizes[li]
            cache_fwd, cache_bwd = cache["layers"][li]
            g_fwd, dX_fwd = self._direction_backward(cache_fwd, d_current[:, :h], f"layer{li}.fwd")
            g_bwd, dX_bwd = self._direction_backward(cache_bwd, d_current[:, h:], f"layer{li}.bwd")
            grads.update(g_fwd)
            grads.update(g_bwd)
            d_current = dX_fwd + dX_bwd
        return grads

    def loss_and_gradients(self, sequences):
        """Summed SSE and its gradients over a batch of (X, y) pairs."""
        grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        total = 0.0
        for X, y in sequences:
            y_hat, cache = self.forward(X)
            err = y_hat - y
            total += float((err**2).sum())
            for name, g in self.backward(cache, 2.0 * err).items():
                grads[name] += g
        return total, grads


def model_gradients(core: BLSTMCore, batch) -> dict:
    """Analytic SSE gradients w.r.t. every parameter (verification surface)."""
    return core.loss_and_gradients(batch)[1]


@dataclass(frozen=True)
class TrainedModel:
    core: BLSTMCore
    config: ModelConfig
    standardizer: Standardizer
    catalog_digest: str | None = None
    feature_names: tuple | None = None


def predict(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    """De-standardized per-frame predictions for raw feature rows."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.core.input_dim:
        raise ValueError(
            f"feature width {features.shape} does not match model input "
            f"{model.core.input_dim}"
        )
    y_hat, _ = model.core.forward(model.standardizer.apply_features(features))
    return model.standardizer.invert_targets(y_hat)


def _epoch_sse(core: BLSTMCore, sequences) -> tuple:
    total, frames = 0.0, 0
    for X, y in sequences:
        y_hat, _ = core.forward(X)
        total += float(((y_hat - y) ** 2).sum())
        frames += y.size
    return total, frames


def train_blstm(train_sequences, val_sequences, config: ModelConfig = ModelConfig(),
                catalog_digest: str | None = None, feature_names=None):
    """Train on per-subject sequences; returns (TrainedModel, history).

    history holds one dict per epoch: epoch (1-based), train_sse and
    val_sse as mean squared error per frame on standardized targets.
    Parameters from the best-validation epoch are returned.
    """
    if not train_sequences:
        raise ValueError("empty training set")
    if not val_sequences:
        raise ValueError("empty validation set")
    train_sequences = sorted(train_sequences, key=lambda s: s.subject)
    val_sequences = sorted(val_sequences, key=lambda s: s.subject)
    width = train_sequences[0].features.shape[1]
    for seq in list(train_sequences) + list(val_sequences):
        if seq.features.shape[1] != width:
            raise ValueError(f"{seq.subject}: feature width {seq.features.shape[1]} != {width}")

    std = fit_standardizer(
        np.concatenate([s.features for s in train_sequences]),
        np.concatenate([s.targets for s in train_sequences]),
    )
    noise_rng = np.random.default_rng([config.seed, 1])
    train = [
        (
            add_noise(std.apply_features(s.features), config.input_noise_sd, noise_rng),
            std.apply_targets(s.targets),
        )
        for s in train_sequences
    ]
    val = [(std.apply_features(s.features), std.apply_targets(s.targets)) for s in val_sequences]

    core = BLSTMCore(width, config.hidden_sizes, np.random.default_rng([config.seed, 0]))
    velocity = {name: np.zeros_like(p) for name, p in core.params.items()}

    best_val = np.inf
    best_epoch = 0
    best_params = {name: p.copy() for name, p in core.params.items()}
    history = []
    for epoch in range(1, config.max_epochs + 1):
        train_total, train_frames = 0.0, 0
        for X, y in train:
            y_hat, cache = core.forward(X)
            err = y_hat - y
            loss = float((err**2).sum())
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            train_total += loss
            train_frames += y.size
            grads = core.backward(cache, 2.0 * err)
            for name, g in grads.items():
                if config.momentum:
                    velocity[name] = config.momentum * velocity[name] - config.learning_rate * g
                    core.params[name] += velocity[name]
                else:
                    core.params[name] -= config.learning_rate * g
        val_total, val_frames = _epoch_sse(core, val)
        if not np.isfinite(val_total):
            raise DivergenceError(epoch)
        history.append(
            {
                "epoch": epoch,
                "train_sse": train_total / train_frames,
                "val_sse": val_total / val_frames,
            }
        )
        if val_total < best_val:
            best_val = val_total
            best_epoch = epoch
            best_params = {name: p.copy() for name, p in core.params.items()}
        elif epoch - best_epoch >= config.patience_epochs:
            log.debug("early stop at epoch %d (best %d)", epoch, best_epoch)
            break
    core.params = best_params
    model = TrainedModel(
        core=core,
        config=config,
        standardizer=std,
        catalog_digest=catalog_digest,
        feature_names=tuple(feature_names) if feature_names is not None else None,
    )
    return model, history


# Checkpoints use a flat deterministic container (json header + raw array
# bytes) rather than npz, whose zip entries embed timestamps and would
# break byte-identical re-runs.
CHECKPOINT_MAGIC = b"EYEAFFECT-CKPT\n"
CHECKPOINT_FORMAT = 1


def save_checkpoint(model: TrainedModel, path):
    arrays = {f"param::{name}": p for name, p in model.core.params.items()}
    arrays["std::feature_mean"] = model.standardizer.feature_mean
    arrays["std::feature_sd"] = model.standardizer.feature_sd
    arrays["std::feature_degenerate"] = model.standardizer.feature_degenerate
    blobs = {}
    offset = 0
    specs = {}
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        raw = arr.tobytes()
        specs[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset}
        blobs[name] = raw
        offset += len(raw)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": __version__,
        "input_dim": model.core.input_dim,
        "hidden_sizes": list(model.core.hidden_sizes),
        "config": {
            "hidden_sizes": list(model.config.hidden_sizes),
            "learning_rate": model.config.learning_rate,
            "input_noise_sd": model.config.input_noise_sd,
            "max_epochs": model.config.max_epochs,
            "patience_epochs": model.config.patience_epochs,
            "seed": model.config.seed,
            "momentum": model.config.momentum,
        },
        "catalog_digest": model.catalog_digest,
        "feature_names": list(model.feature_names) if model.feature_names else None,
        "target_mean": model.standardizer.target_mean,
        "target_sd": model.standardizer.target_sd,
        "target_degenerate": model.standardizer.target_degenerate,
        "arrays": specs,
    }
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for name in sorted(blobs):
            fh.write(blobs[name])


def load_checkpoint(path, expected_catalog_digest: str | None = None) -> TrainedModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        header_len = int.from_bytes(fh.read(8), "little")
        meta = json.loads(fh.read(header_len).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')}")
        if expected_catalog_digest is not None and meta["catalog_digest"] != expected_catalog_digest:
            raise ValueError(
                "checkpoint catalog digest mismatch: "
                f"{meta['catalog_digest']} != {expected_catalog_digest}"
            )
        payload = fh.read()
    arrays = {}
    for name, spec in meta["arrays"].items():
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        start = spec["offset"]
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=start)
        arrays[name] = arr.reshape(spec["shape"]).copy()
    config = ModelConfig(
        hidden_sizes=tuple(meta["config"]["hidden_sizes"]),
        learning_rate=meta["config"]["learning_rate"],
        input_noise_sd=meta["config"]["input_noise_sd"],
        max_epochs=meta["config"]["max_epochs"],
        patience_epochs=meta["config"]["patience_epochs"],
        seed=meta["config"]["seed"],
        momentum=meta["config"]["momentum"],
    )
    core = BLSTMCore(meta["input_dim"], meta["hidden_sizes"], np.random.default_rng(0))
    for name in core.params:
        core.params[name] = arrays[f"param::{name}"]
    std = Standardizer(
        feature_mean=arrays["std::feature_mean"],
        feature_sd=arrays["std::feature_sd"],
        feature_degenerate=arrays["std::feature_degenerate"],
        target_mean=meta["target_mean"],
        target_sd=meta["target_sd"],
        target_degenerate=meta["target_degenerate"],
    )
    names = meta.get("feature_names")
    return TrainedModel(
        core=core,
        config=config,
        standardizer=std,
        catalog_digest=meta["catalog_digest"],
        feature_names=tuple(names) if names else None,
    )
