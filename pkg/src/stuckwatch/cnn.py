"""Multi-channel 1-D convolutional detector with two sigmoid heads.

The network mirrors the sensor layout: the six input channels are split
into two groups of three (IMU first, accelerometer second).  Each group
owns two conv/ReLU/max-pool stages whose kernels are shared across the
group's three axes, so every axis runs through an identical detector stack
and one stuck axis cannot be drowned out by the other two.  The resulting
per-axis feature maps are stacked along the channel axis, the two groups
are concatenated, a final conv/ReLU/max-pool stage mixes them, and a dense
layer emits one logit per sensor.  Both heads are trained jointly with
summed binary cross-entropy on the window's final-sample labels.

All convolutions are valid (no padding), pooling is non-overlapping with
ties resolved to the first occurrence, and ReLU's derivative is 0 at 0.
The forward/backward passes are plain numpy; gradients are checked against
central finite differences in the test suite.

Serialisation is a single file: magic ``SWCN``, a little-endian uint32
header length, a JSON header (architecture, shapes, training config,
parameter order), then every parameter tensor flattened in header order as
little-endian float32.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, TrainingError, UsageError
from .rng import Stream, derive_seed

CNN_FORMAT = "stuckwatch-cnn"
CNN_VERSION = 1
CNN_MAGIC = b"SWCN"

PROB_CLAMP = 1e-7

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

GROUPS = 2
GROUP_CHANNELS = 3
NUM_HEADS = 2


@dataclass(frozen=True)
class ConvStage:
    kernel: int
    filters: int
    pool: int


@dataclass(frozen=True)
class CnnConfig:
    window: int = 180
    stage1: ConvStage = ConvStage(kernel=7, filters=16, pool=2)
    stage2: ConvStage = ConvStage(kernel=5, filters=32, pool=2)
    merge: ConvStage = ConvStage(kernel=3, filters=32, pool=2)
    learning_rate: float = 0.003
    batch_size: int = 64
    epochs: int = 5
    seed: int = 0
    decision_threshold: float = 0.5

    def spatial_lengths(self) -> list[int]:
        """Spatial length after each conv and pool, input first.

        Raises UsageError when a conv kernel no longer fits or a pooling
        stage exhausts the remaining length.
        """
        lengths = [self.window]
        length = self.window
        for label, stage in (("stage1", self.stage1), ("stage2", self.stage2),
                             ("merge", self.merge)):
            if stage.kernel < 1 or stage.filters < 1 or stage.pool < 1:
                raise UsageError(f"{label} must have kernel, filters and pool >= 1")
            length = length - stage.kernel + 1
            if length < 1:
                raise UsageError(
                    f"{label} kernel {stage.kernel} does not fit the remaining "
                    f"spatial length {lengths[-1]}"
                )
            lengths.append(length)
            length = length // stage.pool
            if length < 1:
                raise UsageError(
                    f"{label} pooling by {stage.pool} exhausts the spatial length"
                )
            lengths.append(length)
        return lengths

    def flat_dim(self) -> int:
        return self.merge.filters * self.spatial_lengths()[-1]

    def validate(self) -> None:
        if self.window < 1:
            raise UsageError("window must be >= 1")
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.epochs < 0:
            raise UsageError("epochs must be >= 0")
        if not (0.0 < self.decision_threshold < 1.0):
            raise UsageError("decision_threshold must lie in (0, 1)")
        self.spatial_lengths()


def param_shapes(config: CnnConfig) -> dict[str, tuple[int, ...]]:
    """Parameter tensors in their documented (serialisation) order.

    The two group stages are shared across the group's three axes, so their
    kernels consume one axis at a time; the merge stage sees every axis of
    both groups stacked along the channel dimension.
    """
    shapes: dict[str, tuple[int, ...]] = {}
    for g in range(GROUPS):
        shapes[f"group{g}.conv1.w"] = (config.stage1.filters, 1, config.stage1.kernel)
        shapes[f"group{g}.conv1.b"] = (config.stage1.filters,)
        shapes[f"group{g}.conv2.w"] = (config.stage2.filters, config.stage1.filters, config.stage2.kernel)
        shapes[f"group{g}.conv2.b"] = (config.stage2.filters,)
    shapes["merge.conv.w"] = (config.merge.filters,
                              GROUPS * GROUP_CHANNELS * config.stage2.filters,
                              config.merge.kernel)
    shapes["merge.conv.b"] = (config.merge.filters,)
    shapes["dense.w"] = (NUM_HEADS, config.flat_dim())
    shapes["dense.b"] = (NUM_HEADS,)
    return shapes


class CnnModel:
    def __init__(self, config: CnnConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @property
    def param_order(self) -> list[str]:
        return list(param_shapes(self.config))

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def init_cnn(config: CnnConfig) -> CnnModel:
    """Seeded init: weights uniform +-sqrt(6/(fan_in+fan_out)), biases zero."""
    config.validate()
    stream = Stream(derive_seed(config.seed, "cnn-init"))
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=np.float64)
            continue
        if name.startswith("dense"):
            fan_in, fan_out = shape[1], shape[0]
        else:
            filters, channels, kernel = shape
            fan_in = channels * kernel
            fan_out = filters * kernel
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        size = int(np.prod(shape))
        params[name] = ((stream.uniforms(size) * 2.0 - 1.0) * limit).reshape(shape)
    return CnnModel(config, params)


# ---------------------------------------------------------------------------
# primitives

def conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid cross-correlation: x (B, C, L), w (F, C, k) -> (B, F, L - k + 1)."""
    kernel = w.shape[2]
    cols = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=2)
    cols2 = cols.transpose(0, 2, 1, 3).reshape(x.shape[0], -1, w.shape[1] * kernel)
    out = cols2 @ w.reshape(w.shape[0], -1).T
    return out.transpose(0, 2, 1) + b[None, :, None]


def conv1d_backward(
    x: np.ndarray, w: np.ndarray, dout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) of conv1d given upstream dout (B, F, L')."""
    batch, _, length = x.shape
    filters, channels, kernel = w.shape
    out_len = dout.shape[2]
    cols = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=2)
    cols2 = cols.transpose(0, 2, 1, 3).reshape(batch, out_len, channels * kernel)
    dout2 = dout.transpose(0, 2, 1)
    dw = np.tensordot(dout2, cols2, axes=([0, 1], [0, 1])).reshape(filters, channels, kernel)
    db = dout.sum(axis=(0, 2))
    dcols = (dout2 @ w.reshape(filters, -1)).reshape(batch, out_len, channels, kernel)
    dx = np.zeros_like(x)
    for j in range(kernel):
        dx[:, :, j:j + out_len] += dcols[:, :, :, j].transpose(0, 2, 1)
    return dx, dw, db


def maxpool1d(x: np.ndarray, pool: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pool; returns (pooled, argmax within each block).

    Ties take the first occurrence; a trailing remainder shorter than
    ``pool`` is dropped.
    """
    if pool == 1:
        return x, np.zeros(x.shape, dtype=np.int64)
    batch, channels, length = x.shape
    blocks = length // pool
    xr = x[:, :, : blocks * pool].reshape(batch, channels, blocks, pool)
    idx = xr.argmax(axis=-1)
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool1d_backward(x_shape: tuple[int, ...], pool: int,
                       idx: np.ndarray, dout: np.ndarray) -> np.ndarray:
    if pool == 1:
        return dout
    batch, channels, length = x_shape
    blocks = length // pool
    dxr = np.zeros((batch, channels, blocks, pool), dtype=np.float64)
    np.put_along_axis(dxr, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=np.float64)
    dx[:, :, : blocks * pool] = dxr.reshape(batch, channels, blocks * pool)
    return dx


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------------------
# forward / loss / backward

def _forward(params: dict[str, np.ndarray], config: CnnConfig, x: np.ndarray,
             want_cache: bool):
    cache: dict = {"group": []}
    batch = x.shape[0]
    group_maps = []
    for g in range(GROUPS):
        # Axes fold into the batch so the group kernels apply identically to
        # each of the three channels.
        xa = x[:, g * GROUP_CHANNELS:(g + 1) * GROUP_CHANNELS, :].reshape(
            batch * GROUP_CHANNELS, 1, config.window)
        c1 = conv1d(xa, params[f"group{g}.conv1.w"], params[f"group{g}.conv1.b"])
        r1 = relu(c1)
        p1, idx1 = maxpool1d(r1, config.stage1.pool)
        c2 = conv1d(p1, params[f"group{g}.conv2.w"], params[f"group{g}.conv2.b"])
        r2 = relu(c2)
        p2, idx2 = maxpool1d(r2, config.stage2.pool)
        group_maps.append(p2.reshape(batch, GROUP_CHANNELS * p2.shape[1], p2.shape[2]))
        if want_cache:
            cache["group"].append(
                {"x": xa, "c1": c1, "idx1": idx1, "p1": p1, "c2": c2, "idx2": idx2,
                 "r1_shape": r1.shape, "r2_shape": r2.shape, "p2_shape": p2.shape}
            )
    z = np.concatenate(group_maps, axis=1)
    c3 = conv1d(z, params["merge.conv.w"], params["merge.conv.b"])
    r3 = relu(c3)
    p3, idx3 = maxpool1d(r3, config.merge.pool)
    flat = p3.reshape(x.shape[0], -1)
    logits = flat @ params["dense.w"].T + params["dense.b"]
    probs = np.clip(sigmoid(logits), PROB_CLAMP, 1.0 - PROB_CLAMP)
    if want_cache:
        cache.update({"z": z, "c3": c3, "idx3": idx3, "r3_shape": r3.shape,
                      "p3_shape": p3.shape, "flat": flat, "probs": probs})
        return probs, cache
    return probs, None


def forward(model: CnnModel, x: np.ndarray) -> np.ndarray:
    """Per-window head probabilities, shape (B, 2); accepts a single (6, W)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None, ...]
    _check_input(model.config, x)
    probs, _ = _forward(model.params, model.config, x, want_cache=False)
    return probs[0] if single else probs


def feature_map(model: CnnModel, x: np.ndarray) -> np.ndarray:
    """Pre-dense feature map (B, filters, length); useful for shift checks."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, ...]
    _check_input(model.config, x)
    params, config = model.params, model.config
    batch = x.shape[0]
    group_maps = []
    for g in range(GROUPS):
        xa = x[:, g * GROUP_CHANNELS:(g + 1) * GROUP_CHANNELS, :].reshape(
            batch * GROUP_CHANNELS, 1, config.window)
        p1, _ = maxpool1d(relu(conv1d(xa, params[f"group{g}.conv1.w"], params[f"group{g}.conv1.b"])),
                          config.stage1.pool)
        p2, _ = maxpool1d(relu(conv1d(p1, params[f"group{g}.conv2.w"], params[f"group{g}.conv2.b"])),
                          config.stage2.pool)
        group_maps.append(p2.reshape(batch, GROUP_CHANNELS * p2.shape[1], p2.shape[2]))
    z = np.concatenate(group_maps, axis=1)
    p3, _ = maxpool1d(relu(conv1d(z, params["merge.conv.w"], params["merge.conv.b"])),
                      config.merge.pool)
    return p3


def _check_input(config: CnnConfig, x: np.ndarray) -> None:
    expected = (GROUPS * GROUP_CHANNELS, config.window)
    if x.shape[1:] != expected:
        raise DataError(f"window batch must have shape (B, {expected[0]}, {expected[1]}), got {x.shape}")


def window_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Summed two-head binary cross-entropy for one window."""
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum())


def batch_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean over windows of the summed two-head cross-entropy."""
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    per_window = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum(axis=1)
    return float(per_window.mean())


def backward(model: CnnModel, x: np.ndarray, labels: np.ndarray
             ) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and parameter gradients of the mean batch loss.

    Accepts a single window (6, W) with its label pair or a batch.  Pool
    gradients flow only to each block's argmax (first occurrence); ReLU
    passes gradient only where the pre-activation is strictly positive.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, ...]
        labels = labels.reshape(1, -1)
    _check_input(model.config, x)
    params, config = model.params, model.config
    batch = x.shape[0]
    probs, cache = _forward(params, config, x, want_cache=True)
    loss = batch_loss(probs, labels)

    grads: dict[str, np.ndarray] = {}
    dlogits = (probs - labels) / batch
    grads["dense.w"] = dlogits.T @ cache["flat"]
    grads["dense.b"] = dlogits.sum(axis=0)
    dflat = dlogits @ params["dense.w"]
    dp3 = dflat.reshape(cache["p3_shape"])
    dr3 = maxpool1d_backward(cache["r3_shape"], config.merge.pool, cache["idx3"], dp3)
    dc3 = dr3 * (cache["c3"] > 0.0)
    dz, dw3, db3 = conv1d_backward(cache["z"], params["merge.conv.w"], dc3)
    grads["merge.conv.w"] = dw3
    grads["merge.conv.b"] = db3

    per_group = GROUP_CHANNELS * config.stage2.filters
    for g in range(GROUPS):
        gc = cache["group"][g]
        dp2 = dz[:, g * per_group:(g + 1) * per_group, :].reshape(gc["p2_shape"])
        dr2 = maxpool1d_backward(gc["r2_shape"], config.stage2.pool, gc["idx2"], dp2)
        dc2 = dr2 * (gc["c2"] > 0.0)
        dp1, dw2, db2 = conv1d_backward(gc["p1"], params[f"group{g}.conv2.w"], dc2)
        grads[f"group{g}.conv2.w"] = dw2
        grads[f"group{g}.conv2.b"] = db2
        dr1 = maxpool1d_backward(gc["r1_shape"], config.stage1.pool, gc["idx1"], dp1)
        dc1 = dr1 * (gc["c1"] > 0.0)
        _, dw1, db1 = conv1d_backward(gc["x"], params[f"group{g}.conv1.w"], dc1)
        grads[f"group{g}.conv1.w"] = dw1
        grads[f"group{g}.conv1.b"] = db1
    return loss, grads


def train_cnn(model: CnnModel, x: np.ndarray, labels: np.ndarray,
              log=None) -> tuple[CnnModel, list[float]]:
    """Adam mini-batch training; returns the model and per-epoch mean loss.

    Window order is reshuffled every epoch from the config seed, so a fixed
    (seed, data) pair reproduces the exact parameter trajectory.  Raises
    TrainingError if a head sees only one class or the loss goes non-finite.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if x.ndim != 3 or labels.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise DataError(f"bad training shapes x{x.shape} labels{labels.shape}")
    _check_input(model.config, x)
    if x.shape[0] < 1:
        raise TrainingError("empty training set")
    for head, name in enumerate(("imu", "accelerometer")):
        frac = float(labels[:, head].mean())
        if frac == 0.0 or frac == 1.0:
            raise TrainingError(f"{name} head has single-class training labels")

    config = model.config
    m_state = {k: np.zeros_like(v) for k, v in model.params.items()}
    v_state = {k: np.zeros_like(v) for k, v in model.params.items()}
    step = 0
    history: list[float] = []
    n = x.shape[0]
    for epoch in range(config.epochs):
        perm = Stream(derive_seed(config.seed, "cnn-shuffle", epoch)).permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch_idx = perm[start:start + config.batch_size]
            loss, grads = backward(model, x[batch_idx], labels[batch_idx])
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged at epoch {epoch}: loss {loss}")
            total += loss * batch_idx.size
            step += 1
            bias1 = 1.0 - ADAM_BETA1**step
            bias2 = 1.0 - ADAM_BETA2**step
            for name, grad in grads.items():
                m_state[name] = ADAM_BETA1 * m_state[name] + (1.0 - ADAM_BETA1) * grad
                v_state[name] = ADAM_BETA2 * v_state[name] + (1.0 - ADAM_BETA2) * grad * grad
                update = (m_state[name] / bias1) / (np.sqrt(v_state[name] / bias2) + ADAM_EPS)
                model.params[name] = model.params[name] - config.learning_rate * update
        epoch_loss = total / n
        history.append(epoch_loss)
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs}: mean loss {epoch_loss:.6f}")
    return model, history


def predict_window(model: CnnModel, x: np.ndarray,
                   threshold: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and per-head flags for a window or a batch of windows."""
    if threshold is None:
        threshold = model.config.decision_threshold
    probs = forward(model, x)
    flags = (probs >= threshold).astype(np.uint8)
    return probs, flags


def predict_batched(model: CnnModel, x: np.ndarray, batch: int = 512) -> np.ndarray:
    """Forward in slices to bound memory; returns probabilities (n, 2)."""
    parts = [forward(model, x[i:i + batch]) for i in range(0, x.shape[0], batch)]
    if not parts:
        return np.empty((0, NUM_HEADS))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# serialisation

def pack_params(model: CnnModel) -> np.ndarray:
    return np.concatenate([model.params[name].ravel() for name in model.param_order])


def unpack_params(model: CnnModel, vector: np.ndarray) -> None:
    total = sum(int(np.prod(p.shape)) for p in model.params.values())
    if vector.size != total:
        raise DataError("parameter vector length does not match the model")
    offset = 0
    for name in model.param_order:
        shape = model.params[name].shape
        size = int(np.prod(shape))
        model.params[name] = vector[offset:offset + size].reshape(shape).astype(np.float64)
        offset += size


def _config_to_dict(config: CnnConfig) -> dict:
    return {
        "window": config.window,
        "stage1": [config.stage1.kernel, config.stage1.filters, config.stage1.pool],
        "stage2": [config.stage2.kernel, config.stage2.filters, config.stage2.pool],
        "merge": [config.merge.kernel, config.merge.filters, config.merge.pool],
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "epochs": config.epochs,
        "seed": config.seed,
        "decision_threshold": config.decision_threshold,
    }


def _config_from_dict(data: dict) -> CnnConfig:
    return CnnConfig(
        window=data["window"],
        stage1=ConvStage(*data["stage1"]),
        stage2=ConvStage(*data["stage2"]),
        merge=ConvStage(*data["merge"]),
        learning_rate=data["learning_rate"],
        batch_size=data["batch_size"],
        epochs=data["epochs"],
        seed=data["seed"],
        decision_threshold=data["decision_threshold"],
    )


def save_cnn(model: CnnModel, path) -> Path:
    """Single-file container: SWCN magic, header length, JSON header, f32 blob."""
    path = Path(path)
    shapes = param_shapes(model.config)
    header = {
        "format": CNN_FORMAT,
        "version": CNN_VERSION,
        "config": _config_to_dict(model.config),
        "param_order": list(shapes),
        "param_shapes": {k: list(v) for k, v in shapes.items()},
        "dtype": "<f4",
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = pack_params(model).astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(CNN_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(blob)
    return path


def load_cnn(path) -> CnnModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"network model file not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != CNN_MAGIC:
        raise DataError(f"{path} is not a stuckwatch network model")
    (header_len,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"corrupt network model header: {exc}") from exc
    if header.get("format") != CNN_FORMAT or header.get("version") != CNN_VERSION:
        raise DataError("unsupported network model format/version")
    config = _config_from_dict(header["config"])
    expected = param_shapes(config)
    if header["param_order"] != list(expected):
        raise DataError("network model parameter order does not match its config")
    blob = np.frombuffer(raw[8 + header_len:], dtype="<f4")
    total = sum(int(np.prod(s)) for s in expected.values())
    if blob.size != total:
        raise DataError(f"network model blob holds {blob.size} floats, expected {total}")
    model = CnnModel(config, {k: np.zeros(v) for k, v in expected.items()})
    unpack_params(model, blob.astype(np.float64))
    return model
