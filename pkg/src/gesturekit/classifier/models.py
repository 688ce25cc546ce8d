"""Tiny CNN and micro-ViT gesture classifiers, plus weight-file I/O."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .layers import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GELU,
    LayerNorm,
    MaxPool2,
    MeanTokens,
    PatchEmbed,
    ReLU,
    Sequential,
    encoder_block,
    iter_params,
)
from .ops import NumericError, ShapeError, patch_grid, patchify_array, softmax, softmax_xent

ARCHS = ("tiny_cnn", "micro_vit")


@dataclass
class ClassifierConfig:
    n_classes: int = 4
    arch: str = "tiny_cnn"
    input_side: int = 64
    batch_size: int = 64
    epochs: int = 30
    lr0: float = 1e-4
    lr_after_epoch10: float | None = None   # None: 1e-3 for the CNN, 1e-4 for the ViT
    lr_switch_epoch: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    patch: int = 6
    proj_dim: int = 64
    heads: int = 4
    layers: int = 8
    transformer_mlp: int = 128
    dropout: float = 0.5
    mlp_head: list = field(default_factory=lambda: [2048, 1024])
    cnn_channels: list = field(default_factory=lambda: [8, 16, 32])
    cnn_hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.proj_dim % self.heads:
            raise ValueError("heads must divide proj_dim")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.input_side % (2 ** len(self.cnn_channels)) and self.arch == "tiny_cnn":
            raise ValueError("input_side must be divisible by 2**len(cnn_channels)")
        if self.lr_after_epoch10 is None:
            self.lr_after_epoch10 = 1e-3 if self.arch == "tiny_cnn" else 1e-4
        self.mlp_head = list(self.mlp_head)
        self.cnn_channels = list(self.cnn_channels)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        return self.lr0 if epoch <= self.lr_switch_epoch else self.lr_after_epoch10


@dataclass
class GesturePrediction:
    label_index: int
    probs: np.ndarray
    frame_index: int = 0
    t_ms: float = 0.0


class Classifier:
    """A network plus the config that built it.

    Inputs are ``(N, S, S)`` arrays in {0, 1}; the ViT patchifies internally.
    """

    def __init__(self, config: ClassifierConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(config.seed)
        self.net = build_cnn(config, rng, self.dtype) if config.arch == "tiny_cnn" \
            else build_vit(config, rng, self.dtype)
        self._index = [(name, layer, key) for name, layer, key in iter_params(self.net)]

    # -- parameters --------------------------------------------------------------------

    def params(self) -> dict:
        return {name: layer.params[key] for name, layer, key in self._index}

    def grads(self) -> dict:
        return {name: layer.grads[key] for name, layer, key in self._index}

    def zero_grad(self):
        for _, layer, _ in self._index:
            layer.grads = {}

    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())

    # -- compute ----------------------------------------------------------------------------

    def _prepare(self, images):
        x = np.asarray(images, dtype=self.dtype)
        side = self.config.input_side
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (side, side):
            raise ShapeError(f"model expects {side}x{side} inputs, got {x.shape[1:]}")
        if self.config.arch == "tiny_cnn":
            return x[:, None]
        return patchify_array(x, self.config.patch)

    def forward(self, images, train: bool = False, rng=None) -> np.ndarray:
        return self.net.forward(self._prepare(images), train, rng)

    def loss_and_grad(self, images, labels, rng=None, train: bool = True) -> tuple[float, dict]:
        self.zero_grad()
        logits = self.forward(images, train, rng)
        loss, dlogits = softmax_xent(logits, labels)
        if not np.isfinite(loss):
            raise NumericError("non-finite training loss")
        self.net.backward(dlogits.astype(self.dtype))
        return loss, self.grads()

    def predict_proba(self, images, batch: int = 256) -> np.ndarray:
        x = np.asarray(images)
        if x.ndim == 2:
            x = x[None]
        out = [softmax(self.forward(x[i:i + batch]).astype(np.float64)) for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.config.n_classes))


def build_cnn(cfg: ClassifierConfig, rng, dtype) -> Sequential:
    """``len(cnn_channels)`` x (conv3x3, ReLU, maxpool2), dense-ReLU, dense-n."""
    layers = []
    cin = 1
    for cout in cfg.cnn_channels:
        layers += [Conv2D(cin, cout, 3, rng, dtype), ReLU(), MaxPool2()]
        cin = cout
    spatial = cfg.input_side // 2 ** len(cfg.cnn_channels)
    layers += [Flatten(), Dense(cin * spatial * spatial, cfg.cnn_hidden, rng, dtype), ReLU(),
               Dense(cfg.cnn_hidden, cfg.n_classes, rng, dtype)]
    return Sequential(layers)


def build_vit(cfg: ClassifierConfig, rng, dtype) -> Sequential:
    """Patch embedding, pre-norm encoder stack, token mean, GELU MLP head."""
    _, per_row = patch_grid(cfg.input_side, cfg.patch)
    d = cfg.proj_dim
    layers = [PatchEmbed(cfg.patch * cfg.patch, per_row * per_row, d, rng, dtype)]
    layers += [encoder_block(d, cfg.heads, cfg.transformer_mlp, rng, dtype) for _ in range(cfg.layers)]
    layers += [LayerNorm(d, dtype), MeanTokens()]
    din = d
    for units in cfg.mlp_head:
        layers += [Dense(din, units, rng, dtype), GELU(), Dropout(cfg.dropout)]
        din = units
    layers.append(Dense(din, cfg.n_classes, rng, dtype))
    return Sequential(layers)


def predict(model: Classifier, mask, frame_index: int = 0, t_ms: float = 0.0) -> GesturePrediction:
    x = np.asarray(getattr(mask, "pixels", mask))
    side = model.config.input_side
    if x.shape != (side, side):
        raise ShapeError(f"mask is {x.shape}, model was trained on {side}x{side}")
    probs = model.predict_proba((x > 0).astype(np.float32))[0]
    return GesturePrediction(label_index=int(np.argmax(probs)), probs=probs,
                             frame_index=frame_index, t_ms=t_ms)


# --- weight files ---------------------------------------------------------------------------

MAGIC = b"GKW1"
VERSION = 1


class WeightFormatError(ValueError):
    pass


def encode_weights(tensors: dict) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_weights(buf: bytes) -> dict:
    if buf[:4] != MAGIC:
        raise WeightFormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise WeightFormatError(f"unsupported weight format version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) * 4
            if pos + size > len(buf):
                raise WeightFormatError(f"tensor {name!r} truncated at byte {pos}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=pos).reshape(dims).copy()
            pos += size
    except struct.error as exc:
        raise WeightFormatError(f"truncated weight file: {exc}") from None
    if pos != len(buf):
        raise WeightFormatError(f"{len(buf) - pos} trailing bytes after last tensor")
    return out


def save_model(model: Classifier, path, class_names=None) -> None:
    """Write ``path`` (GKW1 tensors) and ``path + '.json'`` (config, class names)."""
    path = Path(path)
    path.write_bytes(encode_weights(model.params()))
    meta = {"config": asdict(model.config), "class_names": list(class_names or [])}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_model(path) -> tuple[Classifier, list]:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    model = Classifier(ClassifierConfig(**meta["config"]))
    tensors = decode_weights(path.read_bytes())
    params = model.params()
    if set(tensors) != set(params):
        missing = sorted(set(params) - set(tensors))[:3]
        raise WeightFormatError(f"weight file does not match architecture (missing e.g. {missing})")
    for name, arr in tensors.items():
        if arr.shape != params[name].shape:
            raise WeightFormatError(f"{name}: shape {arr.shape} != {params[name].shape}")
        params[name][...] = arr
    return model, meta["class_names"]
