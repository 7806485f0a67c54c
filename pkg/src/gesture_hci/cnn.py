"""Small LeNet-style classifier for 64x64 binary hand canvases, written
directly in numpy, with SGD + momentum training.

conv(8@5x5) -> ReLU -> maxpool2 -> conv(16@5x5) -> ReLU -> maxpool2
-> fc(2704->128) -> ReLU -> fc(128->classes) -> softmax
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

INPUT_SIDE = 64
KERNEL = 5
CONV1, CONV2, HIDDEN = 8, 16, 128
FLAT = CONV2 * 13 * 13
DEFAULT_CLASSES = 16

MAGIC = b"GPCNN"
FORMAT_VERSION = 1

PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b",
               "fc1_w", "fc1_b", "fc2_w", "fc2_b")


class ModelFormatError(ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ModelShapeError(ModelFormatError):
    pass


def param_shapes(num_classes: int) -> dict:
    return {
        "conv1_w": (CONV1, 1, KERNEL, KERNEL),
        "conv1_b": (CONV1,),
        "conv2_w": (CONV2, CONV1, KERNEL, KERNEL),
        "conv2_b": (CONV2,),
        "fc1_w": (HIDDEN, FLAT),
        "fc1_b": (HIDDEN,),
        "fc2_w": (num_classes, HIDDEN),
        "fc2_b": (num_classes,),
    }


@dataclass
class CnnModel:
    params: dict
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [f"class{i}" for i in range(self.num_classes)]
        expected = param_shapes(self.num_classes)
        for name in PARAM_ORDER:
            if self.params[name].shape != expected[name]:
                raise ModelShapeError(
                    f"{name}: expected {expected[name]}, got {self.params[name].shape}")
        if len(self.class_names) != self.num_classes:
            raise ModelShapeError("class name count does not match fc2 width")

    @property
    def num_classes(self) -> int:
        return self.params["fc2_b"].shape[0]

    def copy(self, dtype=None) -> "CnnModel":
        dtype = dtype or self.params["fc2_b"].dtype
        return CnnModel({k: v.astype(dtype, copy=True) for k, v in self.params.items()},
                        list(self.class_names))

    def descriptor(self) -> str:
        parts = [f"{k}={'x'.join(map(str, self.params[k].shape))}" for k in PARAM_ORDER]
        parts.append("classes=" + ",".join(self.class_names))
        return " ".join(parts)


def init_model(num_classes: int = DEFAULT_CLASSES, seed: int = 0,
               class_names=None, zero_output: bool = False) -> CnnModel:
    """He-style uniform fan-in initialisation, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(num_classes).items():
        if name.endswith("_b") or (zero_output and name == "fc2_w"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return CnnModel(params, list(class_names or []))


@dataclass
class GestureScores:
    probabilities: np.ndarray
    label: int

    def name(self, model: CnnModel) -> str:
        return model.class_names[self.label]

    @property
    def confidence(self) -> float:
        return float(self.probabilities[self.label])


def _as_batch(canvas, dtype) -> np.ndarray:
    x = np.asarray(canvas)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (INPUT_SIDE, INPUT_SIDE):
        raise ValueError(f"expected {INPUT_SIDE}x{INPUT_SIDE} canvas, got {x.shape[1:]}")
    return x.astype(dtype)[:, None, :, :]


def _conv_forward(x, w, b):
    cout = w.shape[0]
    win = sliding_window_view(x, (KERNEL, KERNEL), axis=(2, 3))
    B, C, H, W = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * KERNEL * KERNEL)
    out = cols @ w.reshape(cout, -1).T + b
    return out.reshape(B, H, W, cout).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, x_shape, w, need_dx):
    B, cout, H, W = dout.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(B * H * W, cout)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dx = None
    if need_dx:
        C = x_shape[1]
        dcols = (d2 @ w.reshape(cout, -1)).reshape(B, H, W, C, KERNEL, KERNEL)
        dx = np.zeros(x_shape, dtype=dout.dtype)
        for i in range(KERNEL):
            for j in range(KERNEL):
                dx[:, :, i:i + H, j:j + W] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dw, db, dx


def _pool_forward(x):
    B, C, H, W = x.shape
    blocks = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(B, C, H // 2, W // 2, 4)
    arg = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0], arg


def _pool_backward(dout, arg, shape):
    B, C, H, W = shape
    g = np.zeros(arg.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(g, arg[..., None], dout[..., None], axis=-1)
    g = g.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return g.reshape(shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(model: CnnModel, x: np.ndarray, keep_cache: bool = False):
    """x: (B, 1, 64, 64). Returns class probabilities (and the cache)."""
    p = model.params
    a1, cols1 = _conv_forward(x, p["conv1_w"], p["conv1_b"])
    r1 = np.maximum(a1, 0)
    p1, arg1 = _pool_forward(r1)
    a2, cols2 = _conv_forward(p1, p["conv2_w"], p["conv2_b"])
    r2 = np.maximum(a2, 0)
    p2, arg2 = _pool_forward(r2)
    flat = p2.reshape(len(x), -1)
    a3 = flat @ p["fc1_w"].T + p["fc1_b"]
    r3 = np.maximum(a3, 0)
    logits = r3 @ p["fc2_w"].T + p["fc2_b"]
    probs = softmax(logits)
    if not keep_cache:
        return probs
    cache = dict(x=x, a1=a1, cols1=cols1, r1=r1, arg1=arg1, p1=p1, a2=a2, cols2=cols2,
                 r2=r2, arg2=arg2, flat=flat, a3=a3, r3=r3, logits=logits, probs=probs)
    return probs, cache


def predict_proba(model: CnnModel, canvases, batch_size: int = 256) -> np.ndarray:
    dtype = model.params["fc2_b"].dtype
    x = _as_batch(canvases, dtype)
    out = [forward_batch(model, x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.num_classes), dtype)


def forward(model: CnnModel, canvas: np.ndarray) -> GestureScores:
    probs = predict_proba(model, canvas)[0]
    return GestureScores(probabilities=probs, label=int(np.argmax(probs)))


def loss(scores, label: int) -> float:
    """Cross-entropy -log p[label], with p clamped at 1e-12."""
    probs = scores.probabilities if isinstance(scores, GestureScores) else np.asarray(scores)
    if not 0 <= label < len(probs):
        raise ValueError(f"label {label} out of range")
    return float(-math.log(max(float(probs[label]), 1e-12)))


def backward_batch(model: CnnModel, x: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    p = model.params
    probs, c = forward_batch(model, x, keep_cache=True)
    B = len(x)
    labels = np.asarray(labels)
    picked = np.clip(probs[np.arange(B), labels], 1e-12, None)
    batch_loss = float(-np.log(picked.astype(np.float64)).mean())

    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1
    dlogits /= B
    g = {}
    g["fc2_w"] = dlogits.T @ c["r3"]
    g["fc2_b"] = dlogits.sum(axis=0)
    dr3 = dlogits @ p["fc2_w"]
    da3 = dr3 * (c["a3"] > 0)
    g["fc1_w"] = da3.T @ c["flat"]
    g["fc1_b"] = da3.sum(axis=0)
    dp2 = (da3 @ p["fc1_w"]).reshape(c["r2"].shape[0], CONV2, 13, 13)
    dr2 = _pool_backward(dp2, c["arg2"], c["r2"].shape)
    da2 = dr2 * (c["a2"] > 0)
    g["conv2_w"], g["conv2_b"], dp1 = _conv_backward(da2, c["cols2"], c["p1"].shape,
                                                     p["conv2_w"], True)
    dr1 = _pool_backward(dp1, c["arg1"], c["r1"].shape)
    da1 = dr1 * (c["a1"] > 0)
    g["conv1_w"], g["conv1_b"], _ = _conv_backward(da1, c["cols1"], c["x"].shape,
                                                   p["conv1_w"], False)
    return batch_loss, g


def backward(model: CnnModel, canvas: np.ndarray, label: int) -> dict:
    dtype = model.params["fc2_b"].dtype
    _, grads = backward_batch(model, _as_batch(canvas, dtype), np.array([label]))
    return grads


@dataclass
class TrainConfig:
    alpha: float = 1e-4
    mu: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    val_fraction: float = 0.2
    shift: int = 3          # random +-shift px translation of each training sample

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 <= self.mu < 1:
            raise ValueError("mu must lie in [0, 1)")
        if self.shift < 0:
            raise ValueError("shift must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def zero_velocity(model: CnnModel) -> dict:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


def sgd_step(model: CnnModel, grads: dict, velocity: dict, cfg: TrainConfig):
    """v <- mu * v - alpha * grad;  theta <- theta + v  (in place)."""
    for k, theta in model.params.items():
        v = velocity[k]
        v *= cfg.mu
        v -= cfg.alpha * grads[k].astype(v.dtype, copy=False)
        theta += v
    return model, velocity


@dataclass
class LabeledDataset:
    masks: np.ndarray          # (n, 64, 64) bool
    labels: np.ndarray         # (n,) int
    class_names: list

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=bool)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.masks.ndim != 3 or self.masks.shape[1:] != (INPUT_SIDE, INPUT_SIDE):
            raise ValueError(f"samples must be {INPUT_SIDE}x{INPUT_SIDE} masks")
        if len(self.masks) != len(self.labels):
            raise ValueError("mask and label counts differ")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label index out of range")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.masks[idx], self.labels[idx], list(self.class_names))


def split_holdout(dataset: LabeledDataset, fraction: float, seed: int):
    """Stratified seeded split into (train, heldout)."""
    rng = np.random.default_rng(seed)
    train_idx, hold_idx = [], []
    for c in range(len(dataset.class_names)):
        idx = np.flatnonzero(dataset.labels == c)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(fraction * len(idx)))
        hold_idx.extend(idx[:k].tolist())
        train_idx.extend(idx[k:].tolist())
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(hold_idx))


@dataclass
class TrainResult:
    model: CnnModel
    losses: list
    accuracies: list
    heldout: LabeledDataset | None = None


def random_shift(x: np.ndarray, max_shift: int, rng: np.random.Generator) -> np.ndarray:
    """Translate each (1, H, W) sample by up to max_shift px, zero fill."""
    n, _, h, w = x.shape
    offsets = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
    p = max_shift
    padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.empty_like(x)
    for k, (dy, dx) in enumerate(offsets):
        out[k] = padded[k, :, p - dy:p - dy + h, p - dx:p - dx + w]
    return out


def train(dataset: LabeledDataset, cfg: TrainConfig | None = None,
          heldout: LabeledDataset | None = None, log=None) -> TrainResult:
    """Minibatch SGD with momentum. Without an explicit `heldout` set a
    stratified `cfg.val_fraction` of the data is held out."""
    cfg = cfg or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if len(np.unique(dataset.labels)) < 2:
        raise ValueError("training needs at least two classes")
    if heldout is None and cfg.val_fraction > 0:
        dataset, heldout = split_holdout(dataset, cfg.val_fraction, cfg.seed)
    model = init_model(len(dataset.class_names), cfg.seed, dataset.class_names)
    velocity = zero_velocity(model)
    rng = np.random.default_rng(cfg.seed + 1)
    x_all = _as_batch(dataset.masks, np.float32)
    losses, accs = [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            x = x_all[idx]
            if cfg.shift:
                x = random_shift(x, cfg.shift, rng)
            batch_loss, grads = backward_batch(model, x, dataset.labels[idx])
            sgd_step(model, grads, velocity, cfg)
            total += batch_loss * len(idx)
        losses.append(total / len(order))
        if heldout is not None and len(heldout):
            accs.append(evaluate(model, heldout)[0])
        if log:
            log(epoch, losses[-1], accs[-1] if accs else None)
    return TrainResult(model, losses, accs, heldout)


def evaluate(model, dataset: LabeledDataset):
    """Accuracy and confusion matrix (rows: true class, cols: predicted).

    `model` may be a CnnModel or any callable mapping a (n, 64, 64) mask
    batch to predicted labels.
    """
    n = len(dataset.class_names)
    if callable(model) and not isinstance(model, CnnModel):
        pred = np.asarray(model(dataset.masks), dtype=np.int64)
    else:
        pred = predict_proba(model, dataset.masks).argmax(axis=1)
    conf = np.zeros((n, n), dtype=np.int64)
    np.add.at(conf, (dataset.labels, pred), 1)
    acc = float(np.trace(conf)) / len(dataset) if len(dataset) else 0.0
    return acc, conf


def save_model(model: CnnModel, path) -> None:
    desc = model.descriptor().encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(desc + b"\n")
        for k in PARAM_ORDER:
            f.write(np.ascontiguousarray(model.params[k], dtype="<f4").tobytes())


def load_model(path) -> CnnModel:
    with open(path, "rb") as f:
        data = f.read()
    if data[:len(MAGIC)] != MAGIC:
        raise ModelVersionError("not a model file (bad magic)")
    pos = len(MAGIC)
    if len(data) < pos + 2:
        raise ModelFormatError("truncated header")
    (version,) = struct.unpack_from("<H", data, pos)
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported model format version {version}")
    pos += 2
    nl = data.find(b"\n", pos)
    if nl < 0:
        raise ModelFormatError("missing architecture descriptor")
    fields = dict(item.split("=", 1) for item in data[pos:nl].decode("utf-8").split())
    classes = fields.pop("classes", "")
    class_names = classes.split(",") if classes else []
    pos = nl + 1
    params = {}
    for k in PARAM_ORDER:
        if k not in fields:
            raise ModelShapeError(f"descriptor lacks {k}")
        shape = tuple(int(s) for s in fields[k].split("x"))
        count = int(np.prod(shape))
        chunk = data[pos:pos + 4 * count]
        if len(chunk) != 4 * count:
            raise ModelShapeError(f"payload too short for {k} {shape}")
        params[k] = np.frombuffer(chunk, dtype="<f4").astype(np.float32).reshape(shape)
        pos += 4 * count
    if pos != len(data):
        raise ModelShapeError("trailing bytes after parameters")
    return CnnModel(params, class_names)
