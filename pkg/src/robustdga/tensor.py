"""A small reverse-mode autodiff tape over numpy arrays.

Layout is batch-first and channels-last: sequences are ``(B, n, C)``.
Every primitive is a method on :class:`Tape` that computes the forward value
and records a closure producing the input gradients from the output gradient.
Gradients are only materialized for tensors with ``requires_grad`` set, either
directly or through their inputs.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NotOnTape, ShapeMismatch


class Tensor:
    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False, dtype=None):
        self.value = np.asarray(value, dtype=dtype if dtype is not None else None)
        if self.value.dtype.kind not in "fiu":
            raise TypeError("tensor values must be numeric")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


def _check(cond: bool, msg: str):
    if not cond:
        raise ShapeMismatch(msg)


class Tape:
    """Records primitive calls; :meth:`backward` replays them in reverse."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._done = False

    def _record(self, value, inputs, backward) -> Tensor:
        out = Tensor(value, requires_grad=any(t.requires_grad for t in inputs))
        if out.requires_grad:
            self.nodes.append(_Node(out, inputs, backward))
        return out

    # primitives -----------------------------------------------------------

    def embedding_lookup(self, table: Tensor, indices: np.ndarray) -> Tensor:
        indices = np.asarray(indices)
        _check(table.value.ndim == 2, "embedding table must be 2-D")
        _check(indices.dtype.kind in "iu", "indices must be integers")

        def backward(g):
            gt = np.zeros_like(table.value)
            np.add.at(gt, indices.reshape(-1), g.reshape(-1, table.shape[1]))
            return (gt,)

        return self._record(table.value[indices], (table,), backward)

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        _check(a.value.ndim == 2 and b.value.ndim == 2, "matmul needs 2-D operands")
        _check(a.shape[1] == b.shape[0], f"matmul shapes {a.shape} @ {b.shape}")

        def backward(g):
            return (g @ b.value.T if a.requires_grad else None,
                    a.value.T @ g if b.requires_grad else None)

        return self._record(a.value @ b.value, (a, b), backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        _check(a.shape == b.shape, f"add shapes {a.shape} vs {b.shape}")
        return self._record(a.value + b.value, (a, b), lambda g: (g, g))

    def bias_add(self, x: Tensor, b: Tensor) -> Tensor:
        """Add a vector along the last axis (the only broadcast supported)."""
        _check(b.value.ndim == 1 and x.shape[-1] == b.shape[0],
               f"bias {b.shape} does not match {x.shape}")
        axes = tuple(range(x.value.ndim - 1))
        return self._record(x.value + b.value, (x, b),
                            lambda g: (g, g.sum(axis=axes)))

    def scale(self, x: Tensor, c: float) -> Tensor:
        return self._record(x.value * c, (x,), lambda g: (g * c,))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        _check(a.shape == b.shape, f"mul shapes {a.shape} vs {b.shape}")
        return self._record(a.value * b.value, (a, b),
                            lambda g: (g * b.value, g * a.value))

    def sum(self, x: Tensor) -> Tensor:
        return self._record(np.asarray(x.value.sum()), (x,),
                            lambda g: (np.full_like(x.value, g),))

    def reshape(self, x: Tensor, shape) -> Tensor:
        old = x.shape
        return self._record(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))

    def relu(self, x: Tensor) -> Tensor:
        mask = x.value > 0  # subgradient 0 at the kink
        return self._record(x.value * mask, (x,), lambda g: (g * mask,))

    def sigmoid(self, x: Tensor) -> Tensor:
        y = sigmoid(x.value)
        return self._record(y, (x,), lambda g: (g * y * (1 - y),))

    def conv1d(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        """Same-padded 1-D convolution. x: (B, n, C), w: (k, C, O), b: (O,).

        Computed as one matmul per kernel tap whose outputs are shifted and summed.
        """
        _check(x.value.ndim == 3, "conv1d input must be (B, n, C)")
        _check(w.value.ndim == 3 and w.shape[1] == x.shape[2],
               f"conv1d weight {w.shape} does not match input {x.shape}")
        _check(b.shape == (w.shape[2],), "conv1d bias must be (O,)")
        k, C, O = w.shape
        _check(k % 2 == 1, "conv1d kernel size must be odd")
        B, n, _ = x.shape
        half = k // 2
        x2 = x.value.reshape(B * n, C)
        out = (x2 @ w.value[half]).reshape(B, n, O)
        out += b.value
        for j in range(k):
            o = j - half
            if o == 0 or abs(o) >= n:
                continue
            y = (x2 @ w.value[j]).reshape(B, n, O)
            if o < 0:
                out[:, -o:] += y[:, :n + o]
            else:
                out[:, :n - o] += y[:, o:]

        def backward(g):
            g2 = g.reshape(B * n, O)
            gx = gw = gb = None
            if x.requires_grad:
                gx = (g2 @ w.value[half].T).reshape(B, n, C)
                for j in range(k):
                    o = j - half
                    if o == 0 or abs(o) >= n:
                        continue
                    G = (g2 @ w.value[j].T).reshape(B, n, C)
                    if o > 0:
                        gx[:, o:] += G[:, :n - o]
                    else:
                        gx[:, :n + o] += G[:, -o:]
            if w.requires_grad:
                gw = np.empty_like(w.value)
                for j in range(k):
                    o = j - half
                    if o == 0:
                        gw[j] = x2.T @ g2
                        continue
                    gs = np.zeros_like(g)
                    if o > 0:
                        gs[:, o:] = g[:, :n - o]
                    else:
                        gs[:, :n + o] = g[:, -o:]
                    gw[j] = x2.T @ gs.reshape(B * n, O)
            if b.requires_grad:
                gb = g2.sum(axis=0)
            return gx, gw, gb

        return self._record(out, (x, w, b), backward)

    def global_max_pool(self, x: Tensor) -> Tensor:
        """(B, n, C) -> (B, C); ties route the gradient to the first maximum."""
        _check(x.value.ndim == 3, "global_max_pool input must be (B, n, C)")
        arg = x.value.argmax(axis=1)
        B, n, C = x.shape
        bi, ci = np.meshgrid(np.arange(B), np.arange(C), indexing="ij")
        out = x.value[bi, arg, ci]

        def backward(g):
            gx = np.zeros_like(x.value)
            gx[bi, arg, ci] = g
            return (gx,)

        return self._record(out, (x,), backward)

    def bce_loss(self, logits: Tensor, labels) -> Tensor:
        """Mean binary cross-entropy on raw logits (sigmoid fused, overflow-safe)."""
        y = np.asarray(labels, dtype=logits.value.dtype)
        _check(logits.shape == y.shape, f"labels {y.shape} vs logits {logits.shape}")
        z = logits.value
        loss = softplus(z) - y * z
        m = z.size

        def backward(g):
            return (g * (sigmoid(z) - y) / m,)

        return self._record(np.asarray(loss.mean()), (logits,), backward)

    # backward -------------------------------------------------------------

    def backward(self, loss: Tensor):
        _check(loss.value.size == 1, "backward needs a scalar loss")
        if self._done:
            return
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                # never accumulate in place: a backward rule may hand the same
                # array to several inputs
                inp.grad = gi if inp.grad is None else inp.grad + gi
        self._done = True

    def participated(self, t: Tensor) -> bool:
        return any(t is inp for node in self.nodes for inp in node.inputs)


def grad_wrt(tape: Tape, loss: Tensor, target: Tensor) -> np.ndarray:
    """Return d loss / d target, running the backward pass if needed."""
    if not tape.participated(target):
        raise NotOnTape("target tensor was not recorded on this tape")
    tape.backward(loss)
    if target.grad is None:
        return np.zeros_like(target.value)
    return target.grad


def sigmoid(z):
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z):
    """log(1 + exp(z)) without overflow."""
    z = np.asarray(z)
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))
