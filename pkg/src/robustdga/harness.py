"""Evaluation harness: run attack suites against a model and collect reports."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import embedding_attacks as ea
from .advtrain import DISCRETIZERS, EMBEDDING_ATTACKS
from .discrete_attacks import hotflip, hyphen_dga, length_dga, maskdga_wb
from .discretize import DiscretizerSpec, describe, discretize_batch
from .domain import decode_batch, encode_batch
from .errors import DataError
from .metrics import AttackReport, report_from_samples

log = logging.getLogger(__name__)

WHITE_BOX = tuple(f"{a}+{d}" for a in EMBEDDING_ATTACKS for d in DISCRETIZERS) + ("hotflip", "maskdga")
HEURISTIC = ("hyphen", "length")


@dataclass(frozen=True)
class EvalConfig:
    iterations: int = 50
    hotflip_flips: int = 5
    beam_width: int = 10
    seed: int = 0


def assert_test_hygiene(attack_domains, train_domains):
    """Attack inputs must never have been seen in training."""
    leaked = set(attack_domains) & set(train_domains)
    if leaked:
        raise DataError(f"{len(leaked)} attack inputs also occur in training data, "
                        f"e.g. {sorted(leaked)[:3]}")


def embedding_attack_reports(model, origins, kind: str, cfg: EvalConfig = EvalConfig(),
                             discretizers=DISCRETIZERS) -> dict[str, AttackReport]:
    """One attack run at the strongest grid setting, discretized by every scheme."""
    acfg = ea.strongest(kind, iterations=cfg.iterations, seed=cfg.seed)
    V = ea.run_attack(model, model.embed(origins), acfg, np.random.default_rng(cfg.seed))
    out = {}
    for name in discretizers:
        adv = discretize_batch(model, V, DiscretizerSpec.parse(name))
        note = "binary auto-PGD ensemble stand-in" if kind.startswith("bat") else ""
        out[f"{kind}+{name}"] = report_from_samples(f"{kind}+{name}", describe(model, origins, adv), note)
    return out


def white_box_reports(model, origins, cfg: EvalConfig = EvalConfig(),
                      attacks=WHITE_BOX) -> dict[str, AttackReport]:
    """Reports for the requested subset of the 32 white-box combinations."""
    origins = np.asarray(origins)
    reports: dict[str, AttackReport] = {}
    for kind in EMBEDDING_ATTACKS:
        discs = [d for d in DISCRETIZERS if f"{kind}+{d}" in attacks]
        if discs:
            log.info("attack %s on %d samples", kind, len(origins))
            reports.update(embedding_attack_reports(model, origins, kind, cfg, discs))
    if "hotflip" in attacks:
        adv = hotflip(model, origins, cfg.hotflip_flips, cfg.beam_width)
        reports["hotflip"] = report_from_samples("hotflip", describe(model, origins, adv),
                                                 f"n={cfg.hotflip_flips}")
    if "maskdga" in attacks:
        adv = maskdga_wb(model, origins)
        reports["maskdga"] = report_from_samples("maskdga", describe(model, origins, adv))
    return reports


def string_attack_report(model, attack_id: str, origins_text, adv_text) -> AttackReport:
    adv_idx = encode_batch(adv_text)
    samples = describe(model, encode_batch(origins_text), adv_idx)
    return report_from_samples(attack_id, samples)


def heuristic_reports(model, origins, seed: int = 0) -> dict[str, AttackReport]:
    texts = decode_batch(np.asarray(origins))
    rng = np.random.default_rng(seed)
    hy = [hyphen_dga(t, rng)[0] for t in texts]
    ln = [length_dga(t) for t in texts]
    return {"hyphen": string_attack_report(model, "hyphen", texts, hy),
            "length": string_attack_report(model, "length", texts, ln)}


def clean_metrics(model, indices, labels) -> dict:
    """Accuracy figures on clean data; malicious when logit >= 0."""
    z = model.logits_from_indices(indices)
    y = np.asarray(labels).astype(int)
    pred = (z >= 0).astype(int)
    tpr = float((pred[y == 1] == 1).mean()) if (y == 1).any() else float("nan")
    tnr = float((pred[y == 0] == 0).mean()) if (y == 0).any() else float("nan")
    return {"accuracy": float((pred == y).mean()), "tpr": tpr, "tnr": tnr,
            "balanced_accuracy": (tpr + tnr) / 2, "count": int(len(y))}


def mean_fnr(reports: dict[str, AttackReport], ids=WHITE_BOX) -> float:
    return float(np.mean([reports[i].fnr for i in ids]))

