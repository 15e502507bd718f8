"""Gradient attacks in embedding space: PGD (L2/Linf), C&W L2 and binary auto-PGD (BAT).

All attacks are batched. A *model* here is anything exposing ``logit_grad(V)``
returning ``(logits, d logits / d V)`` for ``V`` of shape ``(B, n, d)``; attacks
push malicious-origin inputs (label 1) toward the benign side. Perturbations are
kept in float64 so projections are exact to well below 1e-6.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .tensor import sigmoid, softplus

PGD_L2, PGD_LINF, CW_L2, BAT_L2, BAT_LINF = "pgd_l2", "pgd_linf", "cw_l2", "bat_l2", "bat_linf"
KINDS = (PGD_L2, PGD_LINF, BAT_L2, BAT_LINF, CW_L2)

FULL_L2 = math.sqrt(63 * 128)
EPS_LINF_GRID = (0.01, 0.02, 0.03, 0.05, 0.08, 0.15, 0.25, 0.5, 0.7, 1.0)
EPS_L2_GRID = (0.5, 0.9, 1.6, 2.8, 5.0, 9.0, 16.0, 32.0, 50.0, FULL_L2)
KAPPA_GRID = (0.0, 0.03, 0.08, 0.2, 0.6, 1.7, 4.6, 13.0, 36.0, 100.0)


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    epsilon: float = 1.0
    kappa: float = 0.0
    iterations: int = 50
    restarts: int = 1
    seed: int = 0
    # C&W binary search over the penalty constant
    search_steps: int = 5
    c_init: float = 1.0
    c_min: float = 1e-3
    c_max: float = 1e2
    cw_lr: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.kind != CW_L2 and not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.kappa < 0 or self.iterations < 1 or self.restarts < 1:
            raise ValueError("kappa >= 0, iterations >= 1 and restarts >= 1 required")

    @property
    def norm(self) -> str:
        return "linf" if self.kind.endswith("linf") else "l2"


def hyperparameter_grid(kind: str) -> list[AttackConfig]:
    if kind == CW_L2:
        return [AttackConfig(kind, kappa=k) for k in KAPPA_GRID]
    grid = EPS_LINF_GRID if kind.endswith("linf") else EPS_L2_GRID
    return [AttackConfig(kind, epsilon=e) for e in grid]


# -- helpers -----------------------------------------------------------------

def _flat_norm(x):
    return np.sqrt((x.reshape(len(x), -1) ** 2).sum(axis=1))


def project(delta: np.ndarray, eps: float, norm: str) -> np.ndarray:
    """Project a batch of perturbations onto the eps-ball (per sample)."""
    if norm == "linf":
        return np.clip(delta, -eps, eps)
    n = _flat_norm(delta)
    factor = np.where(n > eps, eps / np.maximum(n, 1e-300), 1.0)
    return delta * factor.reshape((-1,) + (1,) * (delta.ndim - 1))


def _random_init(rng, shape, eps, norm):
    if norm == "linf":
        return rng.uniform(-eps, eps, shape)
    B, D = shape[0], int(np.prod(shape[1:]))
    direction = rng.standard_normal((B, D))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = eps * rng.uniform(0, 1, B) ** (1.0 / D)
    return (direction * radius[:, None]).reshape(shape)


def _step_direction(g, norm):
    if norm == "linf":
        return np.sign(g)
    n = _flat_norm(g)
    scale = np.where(n > 0, 1.0 / np.maximum(n, 1e-300), 0.0)
    return g * scale.reshape((-1,) + (1,) * (g.ndim - 1))


def bce_malicious(z):
    """Loss for the malicious label; larger means closer to a benign verdict."""
    return softplus(-np.asarray(z, dtype=np.float64))


def _loss_grad(model, V, loss: str):
    z, gz = model.logit_grad(V)
    z = np.asarray(z, dtype=np.float64)
    if loss == "bce":
        dl = -sigmoid(-z)  # no cancellation for confident logits
        f = bce_malicious(z)
    else:  # margin on the raw logit
        dl = -np.ones_like(z)
        f = -z
    return z, f, gz.astype(np.float64) * dl.reshape((-1,) + (1,) * (gz.ndim - 1))


def _bcast(mask, like):
    return mask.reshape((-1,) + (1,) * (like.ndim - 1))


# -- PGD ---------------------------------------------------------------------

def pgd(model, V0, cfg: AttackConfig, rng=None) -> np.ndarray:
    """Projected gradient ascent on the BCE loss with random start.

    Returns the highest-loss iterate seen over all restarts and steps (the clean
    input counts as a candidate), always inside the eps-ball around ``V0``.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    V0 = np.asarray(V0, dtype=np.float64)
    eps, norm = cfg.epsilon, cfg.norm
    alpha = 2.5 * eps / cfg.iterations
    best = V0.copy()
    best_f = bce_malicious(model.logit_grad(V0)[0])
    for _ in range(cfg.restarts):
        delta = project(_random_init(rng, V0.shape, eps, norm), eps, norm)
        for it in range(cfg.iterations + 1):
            V = V0 + delta
            _, f, g = _loss_grad(model, V, "bce")
            better = f > best_f
            best[better] = V[better]
            best_f = np.where(better, f, best_f)
            if it == cfg.iterations:
                break
            delta = project(delta + alpha * _step_direction(g, norm), eps, norm)
    return best


# -- C&W L2 ------------------------------------------------------------------

def cw_l2(model, V0, cfg: AttackConfig, kappa=None) -> tuple[np.ndarray, np.ndarray]:
    """Carlini-Wagner L2 in unconstrained embedding space.

    Minimizes ||delta||^2 + c * max(z + kappa, 0) with Adam, binary-searching c.
    Returns ``(V_adv, success)``; success means z <= -kappa at the returned point,
    which is the smallest-norm success seen.  Failures return the last iterate.
    ``kappa`` optionally overrides ``cfg.kappa`` per sample.
    """
    V0 = np.asarray(V0, dtype=np.float64)
    B = len(V0)
    kappa = cfg.kappa if kappa is None else np.asarray(kappa, dtype=np.float64)
    c = np.full(B, cfg.c_init)
    lo, hi = np.full(B, cfg.c_min), np.full(B, cfg.c_max)
    ever = np.zeros(B, dtype=bool)
    best = V0.copy()
    best_l2 = np.full(B, np.inf)
    last = V0.copy()
    b1, b2, ae = 0.9, 0.999, 1e-8
    for _ in range(cfg.search_steps):
        delta = np.zeros_like(V0)
        m = np.zeros_like(V0)
        v = np.zeros_like(V0)
        found = np.zeros(B, dtype=bool)
        for t in range(1, cfg.iterations + 2):
            z, gz = model.logit_grad(V0 + delta)
            z = np.asarray(z, dtype=np.float64)
            l2 = (delta.reshape(B, -1) ** 2).sum(axis=1)
            ok = z <= -kappa
            improve = ok & (l2 < best_l2)
            best[improve] = (V0 + delta)[improve]
            best_l2 = np.where(improve, l2, best_l2)
            found |= ok
            if t == cfg.iterations + 1:
                break
            active = (z + kappa > 0).astype(np.float64) * c
            g = 2 * delta + _bcast(active, gz) * gz.astype(np.float64)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            delta = delta - cfg.cw_lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + ae)
        last = V0 + delta
        ever |= found
        hi = np.where(found, np.minimum(hi, c), hi)
        lo = np.where(found, lo, np.maximum(lo, c))
        c = np.where(found | (hi < cfg.c_max), (lo + hi) / 2, np.minimum(c * 10, cfg.c_max))
    out = np.where(_bcast(ever, V0), best, last)
    return out, ever


# -- binary auto-PGD ensemble --------------------------------------------------

def _checkpoints(n_iter: int) -> list[int]:
    p = [0.0, 0.22]
    while p[-1] < 1:
        p.append(p[-1] + max(p[-1] - p[-2] - 0.03, 0.06))
    return sorted({math.ceil(round(q * n_iter, 9)) for q in p if 0 < q <= 1})


def apgd(model, V0, eps: float, norm: str, iterations: int, loss: str = "bce",
         momentum: float = 0.75, rho: float = 0.75):
    """Auto step-size PGD; returns (best V, best loss, best-loss trace at checkpoints)."""
    x0 = np.asarray(V0, dtype=np.float64)
    _, f, g = _loss_grad(model, x0, loss)
    x_best, f_best, g_best = x0.copy(), f.copy(), g.copy()
    eta = np.full(len(x0), 2.0 * eps)
    x_prev = x0.copy()
    x = project(x0 + _bcast(eta, x0) * _step_direction(g, norm) - x0, eps, norm) + x0
    f_cur = f
    checkpoints = _checkpoints(iterations)
    last_ck = 0
    incr = np.zeros(len(x0), dtype=int)
    eta_ck, fbest_ck = eta.copy(), f_best.copy()
    trace = [f_best.copy()]
    for k in range(1, iterations + 1):
        _, f, g = _loss_grad(model, x, loss)
        incr += f > f_cur
        f_cur = f
        better = f > f_best
        x_best[better], g_best[better] = x[better], g[better]
        f_best = np.where(better, f, f_best)
        if k in checkpoints:
            cond1 = incr < rho * (k - last_ck)
            cond2 = (eta == eta_ck) & (f_best == fbest_ck)
            reduce = cond1 | cond2
            eta = np.where(reduce, eta / 2, eta)
            x[reduce], x_prev[reduce], g[reduce] = x_best[reduce], x_best[reduce], g_best[reduce]
            f_cur = np.where(reduce, f_best, f_cur)
            incr[:] = 0
            last_ck = k
            eta_ck, fbest_ck = eta.copy(), f_best.copy()
            trace.append(f_best.copy())
        if k == iterations:
            break
        zc = project(x + _bcast(eta, x) * _step_direction(g, norm) - x0, eps, norm) + x0
        x_new = x + momentum * (zc - x) + (1 - momentum) * (x - x_prev)
        x_new = project(x_new - x0, eps, norm) + x0
        x_prev, x = x, x_new
    return x_best, f_best, np.array(trace)


def bat(model, V0, cfg: AttackConfig) -> np.ndarray:
    """Two auto-PGD runs (BCE loss and raw-logit margin); keeps the higher-BCE result."""
    V0 = np.asarray(V0, dtype=np.float64)
    xa, _, _ = apgd(model, V0, cfg.epsilon, cfg.norm, cfg.iterations, "bce")
    xb, _, _ = apgd(model, V0, cfg.epsilon, cfg.norm, cfg.iterations, "margin")
    fa = bce_malicious(model.logit_grad(xa)[0])
    fb = bce_malicious(model.logit_grad(xb)[0])
    return np.where(_bcast(fb > fa, V0), xb, xa)


def run_attack(model, V0, cfg: AttackConfig, rng=None) -> np.ndarray:
    if cfg.kind in (PGD_L2, PGD_LINF):
        return pgd(model, V0, cfg, rng)
    if cfg.kind in (BAT_L2, BAT_LINF):
        return bat(model, V0, cfg)
    return cw_l2(model, V0, cfg)[0]


def strongest(kind: str, **overrides) -> AttackConfig:
    """The last (strongest) grid entry for ``kind``."""
    return replace(hyperparameter_grid(kind)[-1], **overrides)
