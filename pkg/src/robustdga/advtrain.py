"""Adversarial training: embedding-space, discrete-domain and joint schemes.

Every minibatch holds 256 clean benign samples and 256 adversarial samples made
from malicious origins with the *current* parameters.  Slot tables fix how many
adversarial samples each attack (and discretizer) contributes; leave-one-group-out
runs drop one group and rescale the rest proportionally.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import embedding_attacks as ea
from .classifier import Classifier
from .discrete_attacks import hotflip, maskdga_wb
from .discretize import ALL_SPECS, DiscretizerSpec, discretize_batch
from .domain import decode_batch, is_valid_e2ld
from .errors import PoolExhausted, UnknownGroup
from .optim import Adam

log = logging.getLogger(__name__)

EMBEDDING_ATTACKS = (ea.PGD_L2, ea.PGD_LINF, ea.BAT_L2, ea.BAT_LINF, ea.CW_L2)
DISCRETIZERS = tuple(s.name for s in ALL_SPECS)
DISCRETE_ATTACKS = ("hotflip", "maskdga")
GROUPS = EMBEDDING_ATTACKS + DISCRETIZERS + DISCRETE_ATTACKS
SCHEMES = ("embedding", "discrete", "joint")

BENIGN_PER_BATCH = 256
ADV_PER_BATCH = 256


@dataclass(frozen=True)
class Slot:
    attack: str
    discretizer: str | None
    count: int


@dataclass(frozen=True)
class MinibatchLayout:
    kind: str
    slots: tuple[Slot, ...]
    benign: int = BENIGN_PER_BATCH

    @property
    def adversarial(self) -> int:
        return sum(s.count for s in self.slots)

    @property
    def total(self) -> int:
        return self.benign + self.adversarial

    def to_manifest(self) -> dict:
        return {"kind": self.kind, "benign": self.benign, "adversarial": self.adversarial,
                "total": self.total,
                "slots": [[s.attack, s.discretizer, s.count] for s in self.slots]}


def rescale(counts, total: int) -> list[int]:
    """Proportional integer shares summing to ``total``; the remainder goes to the last slot."""
    s = sum(counts)
    out = [c * total // s for c in counts]
    out[-1] += total - sum(out)
    return out


def _check_group(hold_out):
    if hold_out is not None and hold_out not in GROUPS:
        raise UnknownGroup(f"unknown group {hold_out!r}; expected one of {', '.join(GROUPS)}")


def embedding_layout(hold_out: str | None = None) -> MinibatchLayout:
    _check_group(hold_out)
    base = [(a, 51) for a in EMBEDDING_ATTACKS[:-1]] + [(EMBEDDING_ATTACKS[-1], 52)]
    base = [(a, c) for a, c in base if a != hold_out]
    counts = rescale([c for _, c in base], ADV_PER_BATCH)
    return MinibatchLayout("embedding", tuple(Slot(a, None, c) for (a, _), c in zip(base, counts)))


def discrete_layout(hold_out: str | None = None) -> MinibatchLayout:
    """Seven pieces (five embedding attacks x 36, HotFlip 38, MaskDGA-WB 38); each embedding
    piece is split evenly over the discretizers."""
    _check_group(hold_out)
    top = [(a, 36) for a in EMBEDDING_ATTACKS] + [("hotflip", 38), ("maskdga", 38)]
    top = [(a, c) for a, c in top if a != hold_out]
    counts = rescale([c for _, c in top], ADV_PER_BATCH)
    discs = [d for d in DISCRETIZERS if d != hold_out]
    slots = []
    for (a, _), c in zip(top, counts):
        if a in DISCRETE_ATTACKS:
            slots.append(Slot(a, None, c))
        else:
            slots += [Slot(a, d, k) for d, k in zip(discs, rescale([6] * len(discs), c))]
    return MinibatchLayout("discrete", tuple(slots))


@dataclass(frozen=True)
class SamplingPolicy:
    eps2_range: tuple[float, float] = (0.5, ea.FULL_L2)
    epsinf_range: tuple[float, float] = (0.01, 1.0)
    kappa_zero_prob: float = 0.5
    kappa_max: float = 100.0
    flips_max: int = 10
    attacks_enabled: bool = True

    def epsilon(self, norm: str, rng) -> float:
        lo, hi = self.epsinf_range if norm == "linf" else self.eps2_range
        return float(rng.uniform(lo, hi))

    def kappa(self, n: int, rng) -> np.ndarray:
        zero = rng.random(n) < self.kappa_zero_prob
        return np.where(zero, 0.0, rng.uniform(0, self.kappa_max, n))

    def flips(self, n: int, rng) -> np.ndarray:
        return rng.integers(1, self.flips_max + 1, n)


@dataclass
class Batch:
    indices: np.ndarray
    labels: np.ndarray
    deltas: np.ndarray | None
    manifest: dict


@dataclass(frozen=True)
class ATConfig:
    max_epochs: int = 50
    learning_rate: float = 1e-3
    seed: int = 0
    joint_prob: float = 0.5  # probability of an embedding-space batch in joint AT
    hold_out: str | None = None
    policy: SamplingPolicy = field(default_factory=SamplingPolicy)
    iterations: int = 50
    cw_search_steps: int = 2
    beam_width: int = 10
    steps_per_epoch: int | None = None


def _attack_cfg(kind, eps, cfg: ATConfig, seed):
    return ea.AttackConfig(kind, epsilon=eps if kind != ea.CW_L2 else 1.0,
                           iterations=cfg.iterations, search_steps=cfg.cw_search_steps,
                           seed=seed)


def _embedding_attack(model, origins, kind, eps, cfg: ATConfig, rng):
    """Adversarial embedding matrices for one attack slot."""
    V0 = model.embed(origins)
    acfg = _attack_cfg(kind, eps, cfg, int(rng.integers(2**31)))
    if kind == ea.CW_L2:
        kappa = cfg.policy.kappa(len(origins), rng)
        return ea.cw_l2(model, V0, acfg, kappa=kappa)[0], {"kappa": kappa.tolist()}
    if kind in (ea.PGD_L2, ea.PGD_LINF):
        return ea.pgd(model, V0, acfg, rng), {}
    return ea.bat(model, V0, acfg), {}


def _check_pools(benign, origins, layout):
    if len(benign) < layout.benign or len(origins) < layout.adversarial:
        raise PoolExhausted(f"need {layout.benign} benign and {layout.adversarial} malicious "
                            f"samples, got {len(benign)} and {len(origins)}")


def build_embedding_batch(model: Classifier, benign, origins, policy: SamplingPolicy, rng,
                          layout: MinibatchLayout | None = None,
                          cfg: ATConfig | None = None) -> Batch:
    """Clean benign rows plus adversarial embedding offsets from malicious origins.

    Adversarial members are stored as (origin indices, delta) so that training
    gradients still reach the embedding table.
    """
    layout = layout or embedding_layout()
    cfg = replace(cfg or ATConfig(), policy=policy)
    benign, origins = np.asarray(benign), np.asarray(origins)
    _check_pools(benign, origins, layout)
    eps = {"l2": policy.epsilon("l2", rng), "linf": policy.epsilon("linf", rng)}
    d = model.arch.embed_dim
    deltas = [np.zeros((layout.benign, origins.shape[1], d))]
    adv_rows, extras, s = [], {}, 0
    for slot in layout.slots:
        o = origins[s:s + slot.count]
        s += slot.count
        if policy.attacks_enabled:
            kind_norm = "linf" if slot.attack.endswith("linf") else "l2"
            V, extra = _embedding_attack(model, o, slot.attack, eps[kind_norm], cfg, rng)
            deltas.append(V - model.embed(o))
            extras.update({f"{slot.attack}.{k}": v for k, v in extra.items()})
        else:
            deltas.append(np.zeros((len(o), o.shape[1], d)))
        adv_rows.append(o)
    indices = np.concatenate([benign[:layout.benign]] + adv_rows)
    labels = np.r_[np.zeros(layout.benign), np.ones(layout.adversarial)].astype(np.float32)
    manifest = dict(layout.to_manifest(), eps_l2=eps["l2"], eps_linf=eps["linf"], **extras)
    return Batch(indices, labels, np.concatenate(deltas).astype(model.dtype), manifest)


def build_discrete_batch(model: Classifier, benign, origins, policy: SamplingPolicy, rng,
                         layout: MinibatchLayout | None = None,
                         cfg: ATConfig | None = None) -> Batch:
    """Clean benign rows plus valid adversarial domains (re-encoded) from every slot."""
    layout = layout or discrete_layout()
    cfg = replace(cfg or ATConfig(), policy=policy)
    benign, origins = np.asarray(benign), np.asarray(origins)
    _check_pools(benign, origins, layout)
    eps = {"l2": policy.epsilon("l2", rng), "linf": policy.epsilon("linf", rng)}
    adv, extras, s = [], {}, 0
    # group consecutive slots of one embedding attack: one attack run, several discretizers
    groups: list[list[Slot]] = []
    for slot in layout.slots:
        if groups and slot.discretizer and groups[-1][0].attack == slot.attack:
            groups[-1].append(slot)
        else:
            groups.append([slot])
    for grp in groups:
        n = sum(x.count for x in grp)
        o = origins[s:s + n]
        s += n
        attack = grp[0].attack
        if not policy.attacks_enabled:
            adv.append(o)
        elif attack == "hotflip":
            flips = policy.flips(n, rng)
            extras["hotflip.flips"] = flips.tolist()
            adv.append(hotflip(model, o, flips, cfg.beam_width))
        elif attack == "maskdga":
            adv.append(maskdga_wb(model, o))
        else:
            kind_norm = "linf" if attack.endswith("linf") else "l2"
            V, extra = _embedding_attack(model, o, attack, eps[kind_norm], cfg, rng)
            extras.update({f"{attack}.{k}": v for k, v in extra.items()})
            t = 0
            for x in grp:
                adv.append(discretize_batch(model, V[t:t + x.count],
                                            DiscretizerSpec.parse(x.discretizer)))
                t += x.count
    adv_rows = np.concatenate(adv)
    bad = [d for d in decode_batch(adv_rows) if not is_valid_e2ld(d)]
    assert not bad, f"invalid adversarial domains produced: {bad[:3]}"
    indices = np.concatenate([benign[:layout.benign], adv_rows])
    labels = np.r_[np.zeros(layout.benign), np.ones(layout.adversarial)].astype(np.float32)
    manifest = dict(layout.to_manifest(), eps_l2=eps["l2"], eps_linf=eps["linf"], **extras)
    return Batch(indices, labels, None, manifest)


class _Cycler:
    """Reshuffled-per-pass index stream over a pool."""

    def __init__(self, n, rng):
        self.n, self.rng, self.order, self.pos = n, rng, rng.permutation(n), 0

    def take(self, k):
        out = []
        while k > 0:
            if self.pos == self.n:
                self.order, self.pos = self.rng.permutation(self.n), 0
            step = min(k, self.n - self.pos)
            out.append(self.order[self.pos:self.pos + step])
            self.pos += step
            k -= step
        return np.concatenate(out)


def batch_types(scheme: str, steps: int, rng, joint_prob: float = 0.5) -> list[str]:
    if scheme == "embedding":
        return ["embedding"] * steps
    if scheme == "discrete":
        return ["discrete"] * steps
    return ["embedding" if rng.random() < joint_prob else "discrete" for _ in range(steps)]


def adv_train(model: Classifier, benign_pool, malicious_pool, scheme: str = "joint",
              cfg: ATConfig = ATConfig(), on_batch=None) -> Classifier:
    """Train for exactly ``cfg.max_epochs`` epochs without early stopping.

    Malicious origins are drawn without replacement within an epoch and
    reshuffled every epoch.  ``on_batch(epoch, step, manifest, loss)`` receives
    every batch manifest.  Returns the final parameters with ``history`` set.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    benign_pool, malicious_pool = np.asarray(benign_pool), np.asarray(malicious_pool)
    emb_layout, disc_layout = embedding_layout(cfg.hold_out), discrete_layout(cfg.hold_out)
    _check_pools(benign_pool, malicious_pool, emb_layout)
    rng = np.random.default_rng(cfg.seed)
    model = model.copy()
    opt = Adam(model.params, lr=cfg.learning_rate)
    benign_stream = _Cycler(len(benign_pool), rng)
    steps = cfg.steps_per_epoch or max(1, len(malicious_pool) // ADV_PER_BATCH)
    history = []
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(malicious_pool))
        types = batch_types(scheme, steps, rng, cfg.joint_prob)
        losses = []
        for step, kind in enumerate(types):
            o = malicious_pool[np.resize(order, (step + 1) * ADV_PER_BATCH)[step * ADV_PER_BATCH:]]
            b = benign_pool[benign_stream.take(BENIGN_PER_BATCH)]
            if kind == "embedding":
                batch = build_embedding_batch(model, b, o, cfg.policy, rng, emb_layout, cfg)
            else:
                batch = build_discrete_batch(model, b, o, cfg.policy, rng, disc_layout, cfg)
            loss, grads = model.loss_and_grads(batch.indices, batch.labels, batch.deltas)
            opt.step(grads)
            losses.append(loss)
            if on_batch is not None:
                on_batch(epoch, step, batch.manifest, loss)
        history.append({"epoch": epoch + 1, "loss": float(np.mean(losses)), "batches": types})
        log.info("AT epoch %d/%d loss %.4f", epoch + 1, cfg.max_epochs, history[-1]["loss"])
    model.history = history
    return model


def logo_train(model_factory, benign_pool, malicious_pool, held_out_group: str,
               cfg: ATConfig = ATConfig(), on_batch=None) -> Classifier:
    """Joint AT with one attack group removed from every batch layout."""
    _check_group(held_out_group)
    if held_out_group is None:
        raise UnknownGroup("a held-out group is required")
    return adv_train(model_factory(), benign_pool, malicious_pool, "joint",
                     replace(cfg, hold_out=held_out_group), on_batch)


def group_rows(group: str) -> list[str]:
    """Attack-matrix rows (attack or attack+discretizer ids) that belong to a group."""
    if group in DISCRETE_ATTACKS:
        return [group]
    if group in EMBEDDING_ATTACKS:
        return [f"{group}+{d}" for d in DISCRETIZERS]
    return [f"{a}+{group}" for a in EMBEDDING_ATTACKS]
