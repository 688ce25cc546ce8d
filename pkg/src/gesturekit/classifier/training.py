"""Seeded mini-batch training with the stepped learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import Classifier, ClassifierConfig
from .ops import Adam, NumericError, softmax_xent


class EmptySplitError(ValueError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


def evaluate(model: Classifier, x, y, batch: int = 256) -> tuple[float, float]:
    """Mean loss and accuracy in inference mode."""
    total, correct = 0.0, 0
    for i in range(0, len(x), batch):
        logits = model.forward(x[i:i + batch]).astype(np.float64)
        loss, _ = softmax_xent(logits, y[i:i + batch])
        total += loss * len(logits)
        correct += int((logits.argmax(axis=1) == y[i:i + batch]).sum())
    return total / len(x), correct / len(x)


def train(x_train, y_train, x_val, y_val, config: ClassifierConfig, log=None):
    """Train from scratch and return ``(best_model, history)``.

    The returned model holds the weights of the epoch with the highest
    validation accuracy (earliest wins ties).
    """
    x_train = np.asarray(x_train, dtype=np.float32)
    x_val = np.asarray(x_val, dtype=np.float32)
    y_train = np.asarray(y_train, dtype=int)
    y_val = np.asarray(y_val, dtype=int)
    if len(x_train) == 0 or len(x_val) == 0:
        raise EmptySplitError("training and validation splits must be non-empty")

    model = Classifier(config)
    # separate streams so dropout draws don't shift the shuffling
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    opt = Adam(config.adam_beta1, config.adam_beta2, config.adam_eps)
    history = []
    best_acc, best_params = -1.0, None

    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch)
        order = shuffle_rng.permutation(len(x_train))
        seen, loss_sum, correct = 0, 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            model.zero_grad()
            logits = model.forward(xb, train=True, rng=dropout_rng)
            loss, dlogits = softmax_xent(logits.astype(np.float64), yb)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            model.net.backward(dlogits.astype(model.dtype))
            opt.step(model.params(), model.grads(), lr)
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == yb).sum())
            seen += len(idx)
        val_loss, val_acc = evaluate(model, x_val, y_val)
        rec = EpochRecord(epoch, loss_sum / seen, correct / seen, val_loss, val_acc, lr)
        history.append(rec)
        if log:
            log(rec)
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = {k: v.copy() for k, v in model.params().items()}

    for name, arr in model.params().items():
        arr[...] = best_params[name]
    return model, history


def history_csv(history) -> str:
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc,lr"]
    for r in history:
        lines.append(f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},"
                     f"{r.val_loss:.6f},{r.val_acc:.6f},{r.lr:g}")
    return "\n".join(lines) + "\n"
