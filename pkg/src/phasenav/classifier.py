"""LOS/NLOS link classifier: a small 1-d CNN trained from scratch.

Input is the length-K time-domain magnitude of a received frame. The
network is conv(64x16, stride 2, same) -> BN -> ReLU -> conv(32x8,
stride 2, same) -> BN -> ReLU -> global average pool -> dense 64 ->
ReLU -> dense 32 -> ReLU -> dense 2 -> softmax, with per-feature input
standardization frozen from the training split. Class 0 is LOS, class
1 is NLOS; the decision threshold applies to the NLOS probability.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import nn

MAGIC = b"PNCK"
CHECKPOINT_VERSION = 1

LOS_CLASS = 0
NLOS_CLASS = 1

#: parameter groups receiving multiplicative weight decay
DECAY_KEYS = frozenset({"conv1_w", "conv2_w", "fc1_w", "fc2_w", "fc3_w"})


@dataclass(frozen=True)
class ArchConfig:
    """Layer dimensions; the defaults are the full-size network."""

    input_length: int = 3276
    conv1_filters: int = 64
    conv1_width: int = 16
    conv2_filters: int = 32
    conv2_width: int = 8
    stride: int = 2
    dense1_units: int = 64
    dense2_units: int = 32
    num_classes: int = 2

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(eq=False)
class ModelParams:
    """Trainable arrays plus frozen normalization state."""

    arch: ArchConfig
    weights: dict          # gradient-carrying arrays
    bn_stats: dict         # running mean/var per BN layer
    feat_mean: np.ndarray  # per-feature input standardization
    feat_std: np.ndarray

    def copy(self) -> "ModelParams":
        return ModelParams(
            arch=self.arch,
            weights={k: v.copy() for k, v in self.weights.items()},
            bn_stats={k: v.copy() for k, v in self.bn_stats.items()},
            feat_mean=self.feat_mean.copy(),
            feat_std=self.feat_std.copy(),
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    l2: float = 1e-4
    lr_drop_factor: float = 0.6
    lr_drop_period: int = 5
    batch_size: int = 64
    max_epochs: int = 30
    early_stop_patience: int = 10
    bn_momentum: float = 0.1
    split: tuple = (0.70, 0.15, 0.15)
    seed: int = 0
    compute_dtype: str = "float32"  # training precision; checkpoints stay float64

    def __post_init__(self):
        if self.learning_rate < 0.0:
            raise ValueError("learning rate must be non-negative")
        if not np.isclose(sum(self.split), 1.0):
            raise ValueError("split fractions must sum to 1")
        if min(self.split) < 0.0:
            raise ValueError("split fractions must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("batch size, epochs, and patience must be positive")
        if self.compute_dtype not in ("float32", "float64"):
            raise ValueError("compute dtype must be float32 or float64")

    def lr_at_epoch(self, epoch: int) -> float:
        """Piecewise-constant schedule; ``epoch`` is zero-based."""
        return self.learning_rate * self.lr_drop_factor ** (epoch // self.lr_drop_period)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


def init_params(arch: ArchConfig, seed: int, dtype=np.float64) -> ModelParams:
    """Fan-in-scaled uniform init, fully determined by the seed.

    ``dtype`` sets the compute precision for the whole network; single
    precision roughly halves training time on large inputs while double
    precision keeps finite-difference checks meaningful.
    """
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape).astype(dtype)

    a = arch
    weights = {
        "conv1_w": uniform((a.conv1_filters, 1, a.conv1_width), a.conv1_width),
        "conv1_b": uniform((a.conv1_filters,), a.conv1_width),
        "bn1_gamma": np.ones(a.conv1_filters, dtype=dtype),
        "bn1_beta": np.zeros(a.conv1_filters, dtype=dtype),
        "conv2_w": uniform(
            (a.conv2_filters, a.conv1_filters, a.conv2_width),
            a.conv1_filters * a.conv2_width,
        ),
        "conv2_b": uniform((a.conv2_filters,), a.conv1_filters * a.conv2_width),
        "bn2_gamma": np.ones(a.conv2_filters, dtype=dtype),
        "bn2_beta": np.zeros(a.conv2_filters, dtype=dtype),
        "fc1_w": uniform((a.dense1_units, a.conv2_filters), a.conv2_filters),
        "fc1_b": uniform((a.dense1_units,), a.conv2_filters),
        "fc2_w": uniform((a.dense2_units, a.dense1_units), a.dense1_units),
        "fc2_b": uniform((a.dense2_units,), a.dense1_units),
        "fc3_w": uniform((a.num_classes, a.dense2_units), a.dense2_units),
        "fc3_b": uniform((a.num_classes,), a.dense2_units),
    }
    bn_stats = {
        "bn1_mean": np.zeros(a.conv1_filters, dtype=dtype),
        "bn1_var": np.ones(a.conv1_filters, dtype=dtype),
        "bn2_mean": np.zeros(a.conv2_filters, dtype=dtype),
        "bn2_var": np.ones(a.conv2_filters, dtype=dtype),
    }
    return ModelParams(
        arch=a,
        weights=weights,
        bn_stats=bn_stats,
        feat_mean=np.zeros(a.input_length, dtype=dtype),
        feat_std=np.ones(a.input_length, dtype=dtype),
    )


def _forward_full(params: ModelParams, x: np.ndarray, training: bool, momentum: float):
    """Shared forward pass returning probabilities, caches, new BN stats."""
    if x.ndim != 2 or x.shape[1] != params.arch.input_length:
        raise ValueError(
            f"expected (batch, {params.arch.input_length}) input, got {x.shape}"
        )
    w = params.weights
    s = params.bn_stats
    x = np.asarray(x, dtype=params.feat_mean.dtype)
    xn = (x - params.feat_mean) / params.feat_std
    h = xn[:, None, :]

    h, c_conv1 = nn.conv1d_forward(h, w["conv1_w"], w["conv1_b"], params.arch.stride)
    h, c_bn1, m1, v1 = nn.batchnorm_forward(
        h, w["bn1_gamma"], w["bn1_beta"], s["bn1_mean"], s["bn1_var"], momentum, training
    )
    h, c_r1 = nn.relu_forward(h)
    h, c_conv2 = nn.conv1d_forward(h, w["conv2_w"], w["conv2_b"], params.arch.stride)
    h, c_bn2, m2, v2 = nn.batchnorm_forward(
        h, w["bn2_gamma"], w["bn2_beta"], s["bn2_mean"], s["bn2_var"], momentum, training
    )
    h, c_r2 = nn.relu_forward(h)
    h, c_gap = nn.global_avg_pool_forward(h)
    h, c_fc1 = nn.dense_forward(h, w["fc1_w"], w["fc1_b"])
    h, c_r3 = nn.relu_forward(h)
    h, c_fc2 = nn.dense_forward(h, w["fc2_w"], w["fc2_b"])
    h, c_r4 = nn.relu_forward(h)
    logits, c_fc3 = nn.dense_forward(h, w["fc3_w"], w["fc3_b"])
    probs = nn.softmax(logits)
    caches = (c_conv1, c_bn1, c_r1, c_conv2, c_bn2, c_r2, c_gap, c_fc1, c_r3, c_fc2, c_r4, c_fc3)
    new_stats = {"bn1_mean": m1, "bn1_var": v1, "bn2_mean": m2, "bn2_var": v2}
    return probs, caches, new_stats


def forward(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Inference-mode class probabilities, rows summing to one.

    Args:
        batch: (batch, input_length) magnitude sequences.

    Returns:
        (batch, num_classes) probabilities; column 1 is the NLOS score.
    """
    probs, _, _ = _forward_full(params, batch, training=False, momentum=0.0)
    return probs


def loss_and_grads(params: ModelParams, x: np.ndarray, targets: np.ndarray, momentum: float):
    """Training-mode cross-entropy loss and analytic gradients.

    Returns (ce_loss, grads, new_bn_stats, probs). The gradient dict
    covers exactly the keys of ``params.weights``; the L2 penalty is
    applied as decoupled decay in the optimizer step, not here.
    """
    probs, caches, new_stats = _forward_full(params, x, training=True, momentum=momentum)
    (c_conv1, c_bn1, c_r1, c_conv2, c_bn2, c_r2, c_gap, c_fc1, c_r3, c_fc2, c_r4, c_fc3) = caches
    loss = nn.cross_entropy(probs, targets)

    g = {}
    d = nn.softmax_ce_backward(probs, targets)
    d, g["fc3_w"], g["fc3_b"] = nn.dense_backward(d, c_fc3)
    d = nn.relu_backward(d, c_r4)
    d, g["fc2_w"], g["fc2_b"] = nn.dense_backward(d, c_fc2)
    d = nn.relu_backward(d, c_r3)
    d, g["fc1_w"], g["fc1_b"] = nn.dense_backward(d, c_fc1)
    d = nn.global_avg_pool_backward(d, c_gap)
    d = nn.relu_backward(d, c_r2)
    d, g["bn2_gamma"], g["bn2_beta"] = nn.batchnorm_backward(d, c_bn2)
    d, g["conv2_w"], g["conv2_b"] = nn.conv1d_backward(d, c_conv2)
    d = nn.relu_backward(d, c_r1)
    d, g["bn1_gamma"], g["bn1_beta"] = nn.batchnorm_backward(d, c_bn1)
    _, g["conv1_w"], g["conv1_b"] = nn.conv1d_backward(d, c_conv1, need_dx=False)
    return loss, g, new_stats, probs


def penalized_loss(ce_loss: float, params: ModelParams, l2: float) -> float:
    penalty = sum(float(np.sum(params.weights[k] ** 2)) for k in DECAY_KEYS)
    return ce_loss + 0.5 * l2 * penalty


#: gradients with both analytic and numeric magnitude below this are
#: treated as matching zeros (conv biases feed batch norm, which absorbs
#: constant shifts, so their true gradient is identically zero and the
#: relative metric would only compare rounding noise)
GRADCHECK_ZERO_FLOOR = 1e-7


def gradient_check(
    params: ModelParams,
    x: np.ndarray,
    targets: np.ndarray,
    step: float = 1e-6,
) -> dict:
    """Central-difference check of every parameter group.

    Returns the worst relative error per group, where the relative
    error of a group is ``max|num - ana| / max(|num|, |ana|)`` over its
    entries, and groups whose both-sided magnitudes stay below
    :data:`GRADCHECK_ZERO_FLOOR` count as exact.
    """
    _, analytic, _, _ = loss_and_grads(params, x, targets, momentum=0.0)
    report = {}
    for name, w in params.weights.items():
        numeric = np.zeros_like(w)
        it = np.nditer(w, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = w[idx]
            w[idx] = orig + step
            up, _, _, _ = loss_and_grads(params, x, targets, momentum=0.0)
            w[idx] = orig - step
            down, _, _, _ = loss_and_grads(params, x, targets, momentum=0.0)
            w[idx] = orig
            numeric[idx] = (up - down) / (2.0 * step)
        ana = analytic[name]
        scale = max(np.abs(numeric).max(), np.abs(ana).max())
        if scale <= GRADCHECK_ZERO_FLOOR:
            report[name] = 0.0
        else:
            report[name] = float(np.abs(numeric - ana).max() / scale)
    return report


def backward_and_step(
    params: ModelParams,
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    opt_state: dict,
    config: TrainConfig,
    lr: float,
) -> tuple[ModelParams, float]:
    """One optimizer step on a minibatch; returns new params and loss.

    The returned loss is cross-entropy plus the L2 penalty evaluated at
    the pre-step parameters.
    """
    ce, grads, new_stats, _ = loss_and_grads(params, batch_x, batch_y, config.bn_momentum)
    new_weights = nn.adam_step(
        params.weights,
        grads,
        opt_state,
        lr=lr,
        weight_decay=config.l2,
        decay_keys=DECAY_KEYS,
    )
    updated = ModelParams(
        arch=params.arch,
        weights=new_weights,
        bn_stats=new_stats,
        feat_mean=params.feat_mean,
        feat_std=params.feat_std,
    )
    return updated, penalized_loss(ce, params, config.l2)


def _eval_loss_acc(params: ModelParams, x: np.ndarray, y: np.ndarray, l2: float, batch: int = 256):
    losses, correct = [], 0
    for start in range(0, x.shape[0], batch):
        xb = x[start : start + batch]
        yb = y[start : start + batch]
        probs = forward(params, xb)
        losses.append(nn.cross_entropy(probs, yb) * xb.shape[0])
        correct += int((probs.argmax(axis=1) == yb).sum())
    ce = sum(losses) / x.shape[0]
    return penalized_loss(ce, params, l2), correct / x.shape[0]


def split_dataset(n: int, split: tuple, rng: np.random.Generator):
    """Seeded shuffle into train/val/test index arrays."""
    perm = rng.permutation(n)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def train(features: np.ndarray, labels_los: np.ndarray, config: TrainConfig, arch: ArchConfig | None = None):
    """Train the CNN on magnitude sequences.

    Args:
        features: (N, input_length) magnitudes.
        labels_los: boolean per sample, True for LOS.
        config: optimizer and schedule settings.
        arch: layer dimensions; defaults to the full-size network with
            input_length taken from the data.

    Returns:
        (params, history, splits): best-validation parameters with
        frozen normalization, per-epoch EpochStats, and the
        (train, val, test) index arrays.
    """
    features = np.asarray(features, dtype=float)
    labels_los = np.asarray(labels_los, dtype=bool)
    if features.ndim != 2 or features.shape[0] != labels_los.size:
        raise ValueError("need one label per feature row")
    if labels_los.all() or (~labels_los).all():
        raise ValueError("training requires both classes to be present")
    targets = np.where(labels_los, LOS_CLASS, NLOS_CLASS)

    if arch is None:
        arch = ArchConfig(input_length=features.shape[1])
    if arch.input_length != features.shape[1]:
        raise ValueError("architecture input length does not match the data")

    rng = np.random.default_rng(config.seed)
    train_idx, val_idx, test_idx = split_dataset(features.shape[0], config.split, rng)
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("split leaves an empty train or validation set")

    dtype = np.dtype(config.compute_dtype)
    x_train = features[train_idx].astype(dtype)
    y_train = targets[train_idx]
    x_val = features[val_idx].astype(dtype)
    y_val = targets[val_idx]

    params = init_params(arch, config.seed, dtype=dtype)
    params.feat_mean = x_train.mean(axis=0, dtype=np.float64).astype(dtype)
    params.feat_std = np.maximum(x_train.std(axis=0, dtype=np.float64), 1e-8).astype(dtype)

    opt_state = nn.adam_init(params.weights)
    history: list[EpochStats] = []
    best_loss = np.inf
    best_params = params.copy()
    stale = 0

    for epoch in range(config.max_epochs):
        lr = config.lr_at_epoch(epoch)
        order = rng.permutation(train_idx.size)
        loss_sum = 0.0
        correct = 0
        # inlined backward_and_step so the batch probabilities also feed
        # the running training accuracy (saves a full re-pass per epoch)
        for start in range(0, order.size, config.batch_size):
            sel = order[start : start + config.batch_size]
            xb, yb = x_train[sel], y_train[sel]
            ce, grads, new_stats, probs = loss_and_grads(params, xb, yb, config.bn_momentum)
            new_weights = nn.adam_step(
                params.weights, grads, opt_state, lr=lr,
                weight_decay=config.l2, decay_keys=DECAY_KEYS,
            )
            loss_sum += penalized_loss(ce, params, config.l2) * sel.size
            correct += int((probs.argmax(axis=1) == yb).sum())
            params = ModelParams(
                arch=params.arch, weights=new_weights, bn_stats=new_stats,
                feat_mean=params.feat_mean, feat_std=params.feat_std,
            )
        train_loss = loss_sum / order.size
        train_acc = correct / order.size
        val_loss, val_acc = _eval_loss_acc(params, x_val, y_val, config.l2)
        history.append(
            EpochStats(
                epoch=epoch + 1,
                lr=lr,
                train_loss=train_loss,
                train_acc=train_acc,
                val_loss=val_loss,
                val_acc=val_acc,
            )
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    return best_params, history, (train_idx, val_idx, test_idx)


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    auc: float
    confusion: np.ndarray            # rows true (LOS, NLOS), columns predicted
    confusion_normalized: np.ndarray
    los_recall: float
    nlos_recall: float
    n: int


def roc_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Area under the ROC by trapezoidal integration over thresholds.

    Tied scores are grouped so saturated probabilities are handled
    correctly. ``positives`` marks the class the score argues for.
    """
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes in the evaluation set")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = positives[order]
    # last index of each tied group
    boundary = np.r_[np.flatnonzero(np.diff(sorted_scores)), sorted_scores.size - 1]
    tp = np.cumsum(sorted_pos)[boundary]
    fp = np.cumsum(~sorted_pos)[boundary]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return float(np.trapezoid(tpr, fpr))


def evaluate(params: ModelParams, features: np.ndarray, labels_los: np.ndarray, threshold: float = 0.5) -> EvalReport:
    """Held-out metrics: accuracy, ROC-AUC, and the confusion matrix.

    The NLOS probability is the score; a link is called NLOS when the
    score reaches ``threshold``.
    """
    features = np.asarray(features, dtype=float)
    labels_los = np.asarray(labels_los, dtype=bool)
    probs = []
    for start in range(0, features.shape[0], 256):
        probs.append(forward(params, features[start : start + 256]))
    probs = np.vstack(probs)
    p_nlos = probs[:, NLOS_CLASS]
    pred_nlos = p_nlos >= threshold

    true_nlos = ~labels_los
    confusion = np.array(
        [
            [int((~pred_nlos & labels_los).sum()), int((pred_nlos & labels_los).sum())],
            [int((~pred_nlos & true_nlos).sum()), int((pred_nlos & true_nlos).sum())],
        ]
    )
    row_sums = confusion.sum(axis=1, keepdims=True)
    normalized = confusion / np.maximum(row_sums, 1)
    accuracy = float((pred_nlos == true_nlos).mean())
    auc = roc_auc(p_nlos, true_nlos)
    return EvalReport(
        accuracy=accuracy,
        auc=auc,
        confusion=confusion,
        confusion_normalized=normalized,
        los_recall=float(normalized[0, 0]),
        nlos_recall=float(normalized[1, 1]),
        n=features.shape[0],
    )


def classify_nlos(params: ModelParams, features: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Boolean NLOS verdict per row at the given decision threshold."""
    probs = forward(params, np.asarray(features, dtype=float))
    return probs[:, NLOS_CLASS] >= threshold


# --- checkpoint format ------------------------------------------------------
#
# magic "PNCK", u32 version, u32 header length, JSON header (arch dims,
# input length, array names and shapes in order), then each array as
# row-major little-endian float64.


def save_checkpoint(params: ModelParams, path) -> None:
    arrays = dict(params.weights)
    arrays.update(params.bn_stats)
    arrays["feat_mean"] = params.feat_mean
    arrays["feat_std"] = params.feat_std
    names = sorted(arrays)
    header = {
        "arch": {k: int(v) for k, v in params.arch.__dict__.items()},
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError("not a model checkpoint")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode())
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError("checkpoint truncated")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(float)
        if fh.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    arch = ArchConfig(**header["arch"])
    feat_mean = arrays.pop("feat_mean")
    feat_std = arrays.pop("feat_std")
    bn_stats = {k: arrays.pop(k) for k in ("bn1_mean", "bn1_var", "bn2_mean", "bn2_var")}
    return ModelParams(
        arch=arch, weights=arrays, bn_stats=bn_stats, feat_mean=feat_mean, feat_std=feat_std
    )


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"])
        for row in history:
            writer.writerow(
                [
                    row.epoch,
                    repr(float(row.lr)),
                    repr(float(row.train_loss)),
                    repr(float(row.train_acc)),
                    repr(float(row.val_loss)),
                    repr(float(row.val_acc)),
                ]
            )
