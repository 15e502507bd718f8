"""Shared test models and fixtures."""

import numpy as np

from robustdga.classifier import ArchMeta, Classifier
from robustdga.domain import ALPHABET, MAX_LEN, encode_batch
from robustdga.tensor import Tape

ALNUM = "abcdefghijklmnopqrstuvwxyz0123456789"


class LinearSurrogate:
    """z = sum_i <A_i, v_i> + b over embedded columns; exact first-order behaviour."""

    def __init__(self, seed=0, d=8, scale=1.0):
        rng = np.random.default_rng(seed)
        self.W = rng.normal(0, 1, (len(ALPHABET), d))
        self.A = rng.normal(0, scale, (MAX_LEN, d))
        self.b = float(rng.normal())
        self.dtype = np.float64

    def embed(self, idx):
        return self.W[np.asarray(idx)]

    def logits(self, V):
        V = np.asarray(V, dtype=np.float64)
        return (V * self.A).sum(axis=(-2, -1)) + self.b

    def logit_grad(self, V):
        V = np.asarray(V, dtype=np.float64)
        return self.logits(V), np.broadcast_to(self.A, V.shape).copy()

    def logits_from_indices(self, idx):
        return self.logits(self.embed(idx))


class ConstantModel(LinearSurrogate):
    """Logit independent of the input."""

    def __init__(self, value=0.3, d=8):
        super().__init__(0, d)
        self.A[:] = 0.0
        self.b = value


def small_model(seed=0, embed_dim=8, channels=8, dtype=np.float64):
    return Classifier.init(ArchMeta(embed_dim=embed_dim, channels=channels), seed, dtype)


def random_domains(rng, n, lo=1, hi=20, hyphen_rate=0.15):
    """Random valid e2LDs."""
    from robustdga.domain import is_valid_e2ld

    out = []
    while len(out) < n:
        L = int(rng.integers(lo, hi + 1))
        chars = [ALNUM[i] for i in rng.integers(0, len(ALNUM), L)]
        for p in range(1, L - 1):
            if rng.random() < hyphen_rate:
                chars[p] = "-"
        s = "".join(chars)
        if is_valid_e2ld(s):
            out.append(s)
    return out


def random_rows(rng, n, lo=1, hi=20):
    return encode_batch(random_domains(rng, n, lo, hi))


# -- gradient checking ---------------------------------------------------------

class PatternTape(Tape):
    """Records relu masks and pool argmaxes so a step can be tested for kink crossings."""

    def __init__(self):
        super().__init__()
        self.pattern = []

    def relu(self, x):
        self.pattern.append(x.value > 0)
        return super().relu(x)

    def global_max_pool(self, x):
        self.pattern.append(x.value.argmax(axis=1))
        return super().global_max_pool(x)


def probe(model, idx, y):
    tape = PatternTape()
    P = model._wrap(False)
    x = tape.embedding_lookup(P["embedding"], idx)
    return float(tape.bce_loss(model.graph(tape, x, P), y).value), tape.pattern


def same_pattern(a, b):
    return all(np.array_equal(p, q) for p, q in zip(a, b))


def finite_diff(f, flat, i, pattern0, h=1e-3):
    """Central difference at h; the step shrinks only while it would cross a relu or
    max-pool kink, where the function is not differentiable across the interval."""
    while True:
        old = flat[i]
        flat[i] = old + h
        fp, pp = f()
        flat[i] = old - h
        fm, pm = f()
        flat[i] = old
        if (same_pattern(pp, pattern0) and same_pattern(pm, pattern0)) or h < 1e-8:
            return (fp - fm) / (2 * h), h
        h /= 10


def rel_err(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def random_parameterization(seed, width=8):
    m = Classifier.init(ArchMeta(embed_dim=width, channels=width), seed, np.float64)
    rng = np.random.default_rng(seed + 1000)
    for k in m.params:
        m.params[k] = m.params[k] + rng.normal(0, 0.05, m.params[k].shape)
    return m, rng


def parameter_gradient_check(seed, coords_per_tensor=40, width=8):
    m, rng = random_parameterization(seed, width)
    idx = rng.integers(0, len(ALPHABET), (2, 63))
    y = np.array([1.0, 0.0])
    _, grads = m.loss_and_grads(idx, y)
    _, pattern0 = probe(m, idx, y)
    worst, steps = 0.0, []
    for name, p in m.params.items():
        flat = p.reshape(-1)
        for i in rng.choice(flat.size, min(coords_per_tensor, flat.size), replace=False):
            num, h = finite_diff(lambda: probe(m, idx, y), flat, i, pattern0)
            worst = max(worst, rel_err(num, grads[name].reshape(-1)[i]))
            steps.append(h)
    return worst, steps
