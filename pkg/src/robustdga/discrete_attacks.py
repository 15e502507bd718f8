"""Attacks that edit symbol sequences directly.

HotFlip and MaskDGA-WB rank single-symbol substitutions by the first-order loss
gain ``(W[c'] - W[c]) . dL/dv_i``; HyphenDGA and LengthDGA are gradient-free
string rewrites; replay scores pre-generated domain lists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import naive_e2ld
from .domain import ALPHABET, HYPHEN, encode_batch, is_valid_e2ld, read_domain_list
from .errors import EmptyAfterFiltering, InvalidDomain
from .metrics import AttackReport, compute_report
from .tensor import sigmoid, softplus

PAD = ALPHABET.pad_index
H = ALPHABET.hyphen_index
_EDGE_OK = np.zeros(len(ALPHABET), dtype=bool)
_EDGE_OK[list(ALPHABET.edge_subset)] = True
_INNER_OK = np.zeros(len(ALPHABET), dtype=bool)
_INNER_OK[list(ALPHABET.valid_e2ld_subset)] = True

LENGTH_TARGET = 48


@dataclass(frozen=True)
class BeamConfig:
    flips: int = 1
    beam_width: int = 10

    def __post_init__(self):
        if self.flips < 0 or self.beam_width < 1:
            raise ValueError("flips >= 0 and beam_width >= 1 required")


def lengths_of(rows: np.ndarray) -> np.ndarray:
    return (np.asarray(rows) != PAD).sum(axis=1)


def substitution_mask(rows: np.ndarray) -> np.ndarray:
    """(R, 63, |alphabet|) mask of substitutions that keep each row a valid e2LD."""
    rows = np.asarray(rows)
    R, n = rows.shape
    L = lengths_of(rows)[:, None]
    pos = np.arange(n)[None]
    edge = (pos == 0) | (pos == L - 1)
    ok = np.where(edge[..., None], _EDGE_OK, _INNER_OK) & (pos < L)[..., None]
    ok &= np.arange(len(ALPHABET))[None, None] != rows[..., None]
    ok[:, 2, H] &= rows[:, 3] != H
    ok[:, 3, H] &= rows[:, 2] != H
    return ok


def substitution_gains(model, rows: np.ndarray) -> np.ndarray:
    """First-order increase of BCE(label=1) for every single substitution; -inf where invalid."""
    rows = np.asarray(rows)
    z, gz = model.logit_grad(model.embed(rows))
    dl = -sigmoid(-np.asarray(z, dtype=np.float64))  # exact even where sigmoid(z) rounds to 1
    G = np.asarray(gz, dtype=np.float64) * dl[:, None, None]
    W = np.asarray(model.W, dtype=np.float64)
    S = G @ W.T
    gains = S - np.take_along_axis(S, rows[..., None], axis=2)
    return np.where(substitution_mask(rows), gains, -np.inf)


def _loss(model, rows) -> np.ndarray:
    z = np.asarray(model.logits_from_indices(rows), dtype=np.float64)
    return softplus(-z)


def hotflip(model, origins, flips, beam_width: int = 10) -> np.ndarray:
    """Beam search over substitutions guided by first-order gains.

    ``flips`` is an int or a per-sample array.  Each round expands every beam
    member with its ``beam_width`` highest-gain substitutions, re-scores the
    candidates with the true loss and keeps the best ``beam_width``.  The
    highest-loss candidate of any round is returned; zero flips returns the input.
    """
    origins = np.asarray(origins)
    B = len(origins)
    flips = np.broadcast_to(np.asarray(flips), (B,))
    best = origins.copy()
    best_loss = np.full(B, -np.inf)
    beams = [origins[b:b + 1] for b in range(B)]
    n_sym = len(ALPHABET)
    for r in range(int(flips.max(initial=0))):
        active = [b for b in range(B) if flips[b] > r]
        members = np.concatenate([beams[b] for b in active])
        owner = np.concatenate([[b] * len(beams[b]) for b in active])
        gains = substitution_gains(model, members).reshape(len(members), -1)
        cands: dict[int, list[np.ndarray]] = {b: [] for b in active}
        for m in range(len(members)):
            g = gains[m]
            top = np.argsort(-g, kind="stable")[:beam_width]
            for flat in top[np.isfinite(g[top])]:
                p, c = divmod(int(flat), n_sym)
                row = members[m].copy()
                row[p] = c
                cands[owner[m]].append(row)
        batch, spans = [], {}
        for b in active:
            uniq = list({row.tobytes(): row for row in cands[b]}.values())
            spans[b] = (len(batch), len(batch) + len(uniq))
            batch.extend(uniq)
        if not batch:
            break
        batch = np.array(batch)
        loss = _loss(model, batch)
        for b in active:
            s, e = spans[b]
            if s == e:
                continue
            order = s + np.argsort(-loss[s:e], kind="stable")
            beams[b] = batch[order[:beam_width]]
            if loss[order[0]] > best_loss[b]:
                best[b], best_loss[b] = batch[order[0]], loss[order[0]]
    return best


def maskdga_wb(model, origins) -> np.ndarray:
    """Replace the ceil(L/2) positions with the largest first-order gain, each with its
    gain-maximizing valid symbol."""
    origins = np.asarray(origins)
    gains = substitution_gains(model, origins)
    best_sym = gains.argmax(axis=2)
    pos_gain = gains.max(axis=2)
    out = origins.copy()
    for b, L in enumerate(lengths_of(origins)):
        k = math.ceil(L / 2)
        chosen = np.argsort(-pos_gain[b, :L], kind="stable")[:k]
        out[b, chosen] = best_sym[b, chosen]
        if out[b, 2] == H and out[b, 3] == H:
            # both were replaced (the mask forbids pairing with an existing hyphen)
            loser = 3 if pos_gain[b, 2] >= pos_gain[b, 3] else 2
            g = gains[b, loser].copy()
            g[H] = -np.inf
            out[b, loser] = int(g.argmax())
    return out


def hyphen_dga(domain: str, rng: np.random.Generator) -> tuple[str, bool]:
    """Set floor(L/2) random interior positions to '-'.

    Returns ``(domain, flagged)``; flagged means no interior position was eligible
    and the input comes back unchanged.
    """
    if not is_valid_e2ld(domain):
        raise InvalidDomain(f"not a valid e2LD: {domain!r}")
    L = len(domain)
    k = L // 2
    eligible = list(range(1, L - 1))
    # an existing hyphen at the 3rd/4th position rules out its partner
    if L > 3 and domain[3] == HYPHEN and 2 in eligible:
        eligible.remove(2)
    if L > 3 and domain[2] == HYPHEN and 3 in eligible:
        eligible.remove(3)
    if not eligible or k == 0:
        return domain, True
    chars = list(domain)
    taken: set[int] = set()
    for p in rng.permutation(eligible):
        if len(taken) == k:
            break
        p = int(p)
        if (p == 2 and 3 in taken) or (p == 3 and 2 in taken):
            continue
        taken.add(p)
        chars[p] = HYPHEN
    return "".join(chars), False


def length_dga(domain: str) -> str:
    """Prepend 'i' up to 48 symbols; longer inputs pass through."""
    if not is_valid_e2ld(domain):
        raise InvalidDomain(f"not a valid e2LD: {domain!r}")
    if len(domain) >= LENGTH_TARGET:
        return domain
    out = "i" * (LENGTH_TARGET - len(domain)) + domain
    if out[2] == HYPHEN and out[3] == HYPHEN:
        # only reachable with a one-symbol prefix: "-" at the input's 2nd and 3rd slot
        out = out[:3] + "i" + out[4:]
    return out


def replay_blackbox(samples_file, model, attack_id: str = "replay") -> AttackReport:
    """Score a pre-generated domain list; FQDN lines are cut to their second-level label."""
    domains = []
    for line in read_domain_list(samples_file):
        d = naive_e2ld(line) if "." in line else line.lower()
        if d and is_valid_e2ld(d):
            domains.append(d)
    if not domains:
        raise EmptyAfterFiltering(f"no valid e2LDs in {samples_file}")
    logits = model.logits_from_indices(encode_batch(domains))
    return compute_report(attack_id, domains, logits, notes="black-box replay")


def run_string_attack(fn, domains, rng=None) -> list[str]:
    """Apply a string attack to many domains (rng only for randomized attacks)."""
    if fn is hyphen_dga:
        return [hyphen_dga(d, rng)[0] for d in domains]
    return [fn(d) for d in domains]
