"""Map adversarial embedding matrices back to valid e2LD strings.

Each column is rounded to its nearest alphabet row under a distance metric
(rows of the embedding table are scaled to unit length first, the columns are
used as-is).  Edges may only take letters and digits, interior positions may
also take '-', and a hyphen pair at positions 3-4 is resolved by keeping the
hyphen in the column closer to it.  The output length comes from either the
first pad-like column (LCO) or a brute-force search over lengths that
maximizes the classifier loss (LBF).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import ALPHABET, MAX_LEN, decode_batch, levenshtein
from .embedding_attacks import run_attack
from .errors import LengthOutOfRange, ZeroVector
from .tensor import softplus

METRICS = ("l2", "linf", "cosine")
LENGTH_RULES = ("lbf", "lco")
MIN_LENGTH = 7

PAD = ALPHABET.pad_index
HYPHEN = ALPHABET.hyphen_index
EDGE = np.array(ALPHABET.edge_subset)
INTERIOR = np.array(ALPHABET.valid_e2ld_subset)


@dataclass(frozen=True)
class DiscretizerSpec:
    length_rule: str
    metric: str
    min_length: int = MIN_LENGTH
    max_length: int = MAX_LEN

    def __post_init__(self):
        if self.length_rule not in LENGTH_RULES:
            raise ValueError(f"unknown length rule {self.length_rule!r}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not 7 <= self.min_length <= self.max_length <= MAX_LEN:
            raise ValueError("need 7 <= min_length <= max_length <= 63")

    @property
    def name(self) -> str:
        return f"{self.length_rule}_{self.metric}"

    @classmethod
    def parse(cls, name: str) -> "DiscretizerSpec":
        rule, _, metric = name.partition("_")
        return cls(rule, metric)


ALL_SPECS = tuple(DiscretizerSpec(r, m) for r in LENGTH_RULES for m in METRICS)


def normalized_table(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    n = np.linalg.norm(W, axis=1, keepdims=True)
    if (n == 0).any():
        raise ZeroVector("embedding table has an all-zero row")
    return W / n


def distances(V, Wn, metric: str, chunk: int = 1024) -> np.ndarray:
    """Distance of every column in ``V`` (..., d) to every table row: (..., |alphabet|)."""
    V = np.asarray(V, dtype=np.float64)
    lead, d = V.shape[:-1], V.shape[-1]
    X = V.reshape(-1, d)
    out = np.empty((len(X), len(Wn)))
    if metric == "cosine":
        xn = np.linalg.norm(X, axis=1)
        if (xn == 0).any():
            raise ZeroVector("cosine distance of an all-zero vector")
        out[:] = 1.0 - (X @ Wn.T) / xn[:, None]
    elif metric in ("l2", "linf"):
        for s in range(0, len(X), chunk):
            diff = np.abs(X[s:s + chunk, None, :] - Wn[None])
            out[s:s + chunk] = (np.sqrt((diff * diff).sum(-1)) if metric == "l2"
                                else diff.max(-1))
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return out.reshape(lead + (len(Wn),))


def round_char(x, allowed, Wn, metric: str) -> int:
    """Index of the nearest allowed symbol; ties go to the lowest index."""
    allowed = np.sort(np.asarray(allowed))
    if allowed.size == 0:
        raise ValueError("allowed symbol set is empty")
    d = distances(np.asarray(x)[None], Wn, metric)[0]
    return int(allowed[np.argmin(d[allowed])])


def _roundings(D):
    edge = EDGE[np.argmin(D[..., EDGE], axis=-1)]
    inner = INTERIOR[np.argmin(D[..., INTERIOR], axis=-1)]
    return edge, inner


def disc_from_distances(D: np.ndarray, lengths, roundings=None) -> np.ndarray:
    """Build (B, 63) index rows from per-column distances (B, 63, |alphabet|).

    ``roundings`` is a precomputed ``_roundings(D)``, reused across candidate lengths.
    """
    B, n = D.shape[:2]
    L = np.broadcast_to(np.asarray(lengths), (B,)).reshape(B, 1)
    if (L < 1).any() or (L > n).any():
        raise LengthOutOfRange(f"length must lie in [1, {n}]")
    edge, inner = _roundings(D) if roundings is None else roundings
    pos = np.arange(n)[None]
    is_edge = (pos == 0) | (pos == L - 1)
    out = np.where(pos < L, np.where(is_edge, edge, inner), PAD)
    clash = (out[:, 2] == HYPHEN) & (out[:, 3] == HYPHEN)
    if clash.any():
        rows = np.flatnonzero(clash)
        third_keeps = D[rows, 2, HYPHEN] <= D[rows, 3, HYPHEN]
        # without the hyphen, the next-closest interior symbol is the edge choice
        loser = np.where(third_keeps, 3, 2)
        out[rows, loser] = edge[rows, loser]
    return out


def disc(V, length: int, Wn, metric: str) -> str:
    """Round one (63, d) matrix to a valid domain of exactly ``length`` symbols."""
    D = distances(np.asarray(V)[None], Wn, metric)
    return decode_batch(disc_from_distances(D, length))[0]


def lco_from_distances(D, min_length: int = MIN_LENGTH) -> np.ndarray:
    n = D.shape[1]
    nearest = np.argmin(D, axis=-1)
    hit = nearest[:, 1:] == PAD
    first = np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, n)
    return np.maximum(min_length, first)


def length_lco(V, Wn, metric: str, min_length: int = MIN_LENGTH) -> np.ndarray:
    """First 0-based column in [1, 62] whose unrestricted rounding is the pad, else 63;
    clamped below at ``min_length``."""
    V = np.asarray(V)
    single = V.ndim == 2
    out = lco_from_distances(distances(V[None] if single else V, Wn, metric), min_length)
    return int(out[0]) if single else out


def lbf_from_distances(model, D, y=1, min_length=MIN_LENGTH, max_length=MAX_LEN):
    """Returns (lengths (B,), loss table (B, max_length - min_length + 1))."""
    B = D.shape[0]
    Ls = np.arange(min_length, max_length + 1)
    r = _roundings(D)
    cand = np.concatenate([disc_from_distances(D, L, r)[:, None] for L in Ls], axis=1)
    z = model.logits_from_indices(cand.reshape(-1, MAX_LEN)).reshape(B, len(Ls))
    z = z.astype(np.float64)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), (B,))[:, None]
    losses = softplus(z) - y * z
    return Ls[np.argmax(losses, axis=1)], losses


def length_lbf(model, V, metric: str, y=1, min_length=MIN_LENGTH, max_length=MAX_LEN):
    """Length in [min_length, max_length] whose rounding maximizes the loss; ties go
    to the smallest length."""
    V = np.asarray(V)
    single = V.ndim == 2
    Wn = normalized_table(model.W)
    D = distances(V[None] if single else V, Wn, metric)
    lengths, _ = lbf_from_distances(model, D, y, min_length, max_length)
    return int(lengths[0]) if single else lengths


def discretize_batch(model, V, spec: DiscretizerSpec, y=1) -> np.ndarray:
    """(B, 63, d) adversarial matrices -> (B, 63) index rows of valid domains."""
    Wn = normalized_table(model.W)
    D = distances(V, Wn, spec.metric)
    if spec.length_rule == "lco":
        L = np.minimum(lco_from_distances(D, spec.min_length), spec.max_length)
    else:
        L, _ = lbf_from_distances(model, D, y, spec.min_length, spec.max_length)
    return disc_from_distances(D, L)


@dataclass
class AdversarialSample:
    origin: str
    domain: str
    logit: float
    l2: float
    linf: float
    levenshtein: int


def describe(model, origin_idx, adv_idx, logits=None) -> list[AdversarialSample]:
    """Score and measure adversarial index rows against their origins."""
    origin_idx, adv_idx = np.asarray(origin_idx), np.asarray(adv_idx)
    if logits is None:
        logits = model.logits_from_indices(adv_idx)
    W = np.asarray(model.W, dtype=np.float64)
    diff = (W[adv_idx] - W[origin_idx]).reshape(len(adv_idx), -1)
    l2 = np.sqrt((diff ** 2).sum(axis=1))
    linf = np.abs(diff).max(axis=1)
    origins, advs = decode_batch(origin_idx), decode_batch(adv_idx)
    return [AdversarialSample(o, a, float(z), float(d2), float(di), levenshtein(o, a))
            for o, a, z, d2, di in zip(origins, advs, logits, l2, linf)]


def attack_and_discretize(model, origin_idx, attack_cfg, spec: DiscretizerSpec,
                          rng=None) -> list[AdversarialSample]:
    origin_idx = np.asarray(origin_idx)
    V_adv = run_attack(model, model.embed(origin_idx), attack_cfg, rng)
    adv_idx = discretize_batch(model, V_adv, spec)
    return describe(model, origin_idx, adv_idx)
