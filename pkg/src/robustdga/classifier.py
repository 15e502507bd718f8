"""Residual character-CNN binary DGA classifier on e2LDs.

embedding (|alphabet| x d) -> 2 residual blocks [conv k3 -> relu -> conv k3, identity
skip, relu] -> global max pool -> dense -> one logit.  Malicious = 1.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container
from .domain import ALPHABET, MAX_LEN
from .errors import EmptySplit, ShapeMismatch
from .optim import Adam
from .tensor import Tape, Tensor, sigmoid, softplus

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArchMeta:
    vocab: int = len(ALPHABET)
    embed_dim: int = 128
    channels: int = 128
    blocks: int = 2
    kernel: int = 3
    seq_len: int = MAX_LEN


@dataclass
class TrainConfig:
    max_epochs: int = 50
    patience: int = 5
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size % 2:
            raise ValueError("batch_size must be even")


@dataclass
class Classifier:
    params: dict[str, np.ndarray]
    arch: ArchMeta = field(default_factory=ArchMeta)

    @classmethod
    def init(cls, arch: ArchMeta = ArchMeta(), seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        k, C, d = arch.kernel, arch.channels, arch.embed_dim
        p = {"embedding": rng.normal(0, 0.1, (arch.vocab, d))}
        if C != d:
            p["stem.weight"] = rng.normal(0, np.sqrt(1 / d), (1, d, C))
            p["stem.bias"] = np.zeros(C)
        for b in range(arch.blocks):
            for j in (1, 2):
                # second conv starts small so each block begins near identity
                scale = np.sqrt(2 / (k * C)) * (1.0 if j == 1 else 0.5)
                p[f"block{b}.conv{j}.weight"] = rng.normal(0, scale, (k, C, C))
                p[f"block{b}.conv{j}.bias"] = np.zeros(C)
        p["head.weight"] = rng.normal(0, np.sqrt(1 / C), (C, 1))
        p["head.bias"] = np.zeros(1)
        return cls({n: v.astype(dtype) for n, v in p.items()}, arch)

    # -- structure ---------------------------------------------------------

    @property
    def W(self) -> np.ndarray:
        return self.params["embedding"]

    @property
    def dtype(self):
        return self.W.dtype

    def copy(self) -> "Classifier":
        return Classifier({k: v.copy() for k, v in self.params.items()}, self.arch)

    def astype(self, dtype) -> "Classifier":
        return Classifier({k: v.astype(dtype) for k, v in self.params.items()}, self.arch)

    def embed(self, indices) -> np.ndarray:
        """(B, n) or (n,) indices -> (B, n, d) or (n, d) embedding matrix."""
        return self.W[np.asarray(indices)]

    # -- graph -------------------------------------------------------------

    def graph(self, tape: Tape, x: Tensor, P: dict[str, Tensor]) -> Tensor:
        """Build the classifier graph on ``tape``; x is (B, n, d). Returns (B,) logits."""
        a = self.arch
        if x.value.ndim != 3 or x.shape[1:] != (a.seq_len, a.embed_dim):
            raise ShapeMismatch(f"expected (B, {a.seq_len}, {a.embed_dim}), got {x.shape}")
        h = x
        if "stem.weight" in P:
            h = tape.conv1d(h, P["stem.weight"], P["stem.bias"])
        for b in range(a.blocks):
            r = tape.relu(tape.conv1d(h, P[f"block{b}.conv1.weight"], P[f"block{b}.conv1.bias"]))
            r = tape.conv1d(r, P[f"block{b}.conv2.weight"], P[f"block{b}.conv2.bias"])
            h = tape.relu(tape.add(h, r))
        pooled = tape.global_max_pool(h)
        z = tape.bias_add(tape.matmul(pooled, P["head.weight"]), P["head.bias"])
        return tape.reshape(z, (x.shape[0],))

    def _wrap(self, requires_grad: bool) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def logits(self, V, batch_size: int = 1024) -> np.ndarray:
        V = np.asarray(V, dtype=self.dtype)
        single = V.ndim == 2
        if single:
            V = V[None]
        out = []
        P = self._wrap(False)
        for s in range(0, len(V), batch_size):
            out.append(self.graph(Tape(), Tensor(V[s:s + batch_size]), P).value)
        z = np.concatenate(out) if out else np.zeros(0, dtype=self.dtype)
        return z[0] if single else z

    def logit_grad(self, V) -> tuple[np.ndarray, np.ndarray]:
        """Logits and d logit / d V for a batch of embedded inputs."""
        V = np.asarray(V, dtype=self.dtype)
        tape = Tape()
        x = Tensor(V, requires_grad=True)
        z = self.graph(tape, x, self._wrap(False))
        tape.backward(tape.sum(z))
        return z.value, x.grad

    def logits_from_indices(self, indices, batch_size: int = 1024) -> np.ndarray:
        return self.logits(self.embed(indices), batch_size)

    def predict_proba(self, indices) -> np.ndarray:
        return sigmoid(self.logits_from_indices(indices))

    def loss_and_grads(self, indices, labels, deltas=None):
        """Mean BCE and parameter gradients. ``deltas`` perturbs the embedded input
        (embedding-space adversarial samples); gradients still reach the table."""
        tape = Tape()
        P = self._wrap(True)
        x = tape.embedding_lookup(P["embedding"], np.asarray(indices))
        if deltas is not None:
            x = tape.add(x, Tensor(np.asarray(deltas, dtype=self.dtype)))
        loss = tape.bce_loss(self.graph(tape, x, P), labels)
        tape.backward(loss)
        return float(loss.value), {k: t.grad for k, t in P.items()}

    # -- persistence -------------------------------------------------------

    def save(self, path):
        container.save(path, self.params, {"kind": "classifier", "arch": asdict(self.arch)})

    @classmethod
    def load(cls, path) -> "Classifier":
        tensors, meta = container.load(path)
        return cls(tensors, ArchMeta(**meta["arch"]))


def bce(z, y):
    """Per-sample binary cross-entropy on logits."""
    z = np.asarray(z, dtype=np.float64)
    return softplus(z) - np.asarray(y) * z


def mean_loss(model: Classifier, indices, labels) -> float:
    return float(bce(model.logits_from_indices(indices), labels).mean())


def train(x_train, y_train, x_val, y_val, cfg: TrainConfig = TrainConfig(),
          model: Classifier | None = None, arch: ArchMeta = ArchMeta()) -> Classifier:
    """Adam training with early stopping on validation loss.

    Returns the parameters of the best validation epoch; ``model.history``
    holds per-epoch (train_loss, val_loss).
    """
    x_train, y_train = np.asarray(x_train), np.asarray(y_train, dtype=np.float32)
    x_val, y_val = np.asarray(x_val), np.asarray(y_val, dtype=np.float32)
    if len(x_train) == 0 or len(x_val) == 0:
        raise EmptySplit("training and validation splits must be non-empty")
    model = Classifier.init(arch, cfg.seed) if model is None else model.copy()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, lr=cfg.learning_rate)
    best, best_params, stale, history = np.inf, model.copy().params, 0, []
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(x_train))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            loss, grads = model.loss_and_grads(x_train[b], y_train[b])
            opt.step(grads)
            losses.append(loss)
        val = mean_loss(model, x_val, y_val)
        history.append((float(np.mean(losses)), val))
        log.info("epoch %d train %.4f val %.4f", epoch + 1, history[-1][0], val)
        if val < best:
            best, best_params, stale = val, model.copy().params, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    out = Classifier(best_params, model.arch)
    out.history = history
    return out
