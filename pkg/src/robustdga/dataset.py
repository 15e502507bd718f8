"""Dataset construction: e2LD extraction, capped/temporally filtered sampling, folds."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .domain import encode_batch, is_valid_e2ld, read_domain_list
from .errors import DataError, EmptySplit, NoRegistrableLabel, UnknownSuffix

log = logging.getLogger(__name__)

BENIGN, MALICIOUS = 0, 1
DEFAULT_CAP = 2350


# -- public suffix handling -------------------------------------------------------

class SuffixList:
    """Public-suffix rules: plain ("co.uk"), wildcard ("*.ck") and exception ("!www.ck")."""

    def __init__(self, rules=()):
        self.rules: set[tuple[str, ...]] = set()
        self.exceptions: set[tuple[str, ...]] = set()
        for line in rules:
            line = line.split("//")[0].strip()
            if not line:
                continue
            line = line.split()[0].lower()
            if line.startswith("!"):
                self.exceptions.add(tuple(line[1:].split(".")))
            else:
                self.rules.add(tuple(line.split(".")))

    @classmethod
    def from_file(cls, path) -> "SuffixList":
        with open(path, encoding="utf-8") as fh:
            return cls(fh)

    def _matches(self, rule, labels) -> bool:
        if len(rule) > len(labels):
            return False
        tail = labels[len(labels) - len(rule):]
        return all(r == "*" or r == t for r, t in zip(rule, tail))

    def suffix_length(self, labels: tuple[str, ...]) -> int | None:
        """Number of trailing labels forming the public suffix, None if no rule matches."""
        exc = [r for r in self.exceptions if self._matches(r, labels)]
        if exc:
            return max(len(r) for r in exc) - 1
        hits = [len(r) for r in self.rules if self._matches(r, labels)]
        return max(hits) if hits else None


def naive_e2ld(fqdn: str) -> str:
    """Second-to-last label (the last label is taken as the suffix)."""
    labels = [x for x in fqdn.strip().lower().rstrip(".").split(".") if x]
    if len(labels) < 2:
        raise NoRegistrableLabel(f"{fqdn!r} has no label left of its suffix")
    return labels[-2]


def extract_e2ld(fqdn: str, suffix_list: SuffixList | None = None, fallback: bool = True) -> str:
    """The label immediately left of the longest matching public suffix."""
    if suffix_list is None:
        return naive_e2ld(fqdn)
    labels = tuple(x for x in fqdn.strip().lower().rstrip(".").split(".") if x)
    if not labels:
        raise NoRegistrableLabel("empty domain")
    n = suffix_list.suffix_length(labels)
    if n is None:
        if not fallback:
            raise UnknownSuffix(f"no suffix rule matches {fqdn!r}")
        n = 1
    if n >= len(labels):
        raise NoRegistrableLabel(f"{fqdn!r} is itself a public suffix")
    return labels[len(labels) - n - 1]


# -- records and datasets ---------------------------------------------------------

@dataclass(frozen=True)
class LabeledRecord:
    domain: str
    label: int
    family: str | None = None
    first_seen: date | None = None

    def __post_init__(self):
        if self.label == MALICIOUS and not self.family:
            raise ValueError("malicious records need a family name")

    @property
    def stratum(self) -> tuple[int, str]:
        return (self.label, self.family or "")


@dataclass
class LabeledDataset:
    records: list[LabeledRecord]
    holdout: list[LabeledRecord] = field(default_factory=list)
    report: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def indices(self, subset=None) -> np.ndarray:
        recs = self.records if subset is None else [self.records[i] for i in subset]
        return encode_batch([r.domain for r in recs])

    def labels(self, subset=None) -> np.ndarray:
        recs = self.records if subset is None else [self.records[i] for i in subset]
        return np.array([r.label for r in recs], dtype=np.float32)


def _domain_ok(d: str) -> bool:
    return is_valid_e2ld(d)


def _to_e2ld(raw: str, suffix_list) -> str:
    raw = raw.strip().lower()
    return extract_e2ld(raw, suffix_list) if "." in raw else raw


def read_malicious_csv(path, suffix_list=None):
    """Rows of family,domain[,first_seen]; returns (records, malformed (line, reason) list)."""
    records, malformed = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() == "family":
                continue
            try:
                if len(row) < 2 or not row[0].strip() or not row[1].strip():
                    raise ValueError("expected family,domain[,first_seen]")
                seen = date.fromisoformat(row[2].strip()[:10]) if len(row) > 2 and row[2].strip() else None
                d = _to_e2ld(row[1], suffix_list)
                if not _domain_ok(d):
                    raise ValueError(f"unusable e2LD {d!r}")
                records.append(LabeledRecord(d, MALICIOUS, row[0].strip(), seen))
            except (ValueError, DataError) as exc:
                malformed.append((lineno, str(exc)))
    return records, malformed


def build_dataset(benign_file, malicious_csv, cap_per_family: int = DEFAULT_CAP,
                  cutoff_date: date | None = None, seed: int = 0, suffix_list=None,
                  balance: bool = True) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    report: dict = {"malformed_rows": [], "skipped_benign": 0}
    seen: set[str] = set()
    duplicates = 0

    benign = []
    for line in read_domain_list(benign_file):
        try:
            d = _to_e2ld(line, suffix_list)
        except DataError:
            report["skipped_benign"] += 1
            continue
        if not _domain_ok(d):
            report["skipped_benign"] += 1
            continue
        if d in seen:
            duplicates += 1
            continue
        seen.add(d)
        benign.append(LabeledRecord(d, BENIGN))

    mal, malformed = read_malicious_csv(malicious_csv, suffix_list)
    report["malformed_rows"] = [f"line {n}: {why}" for n, why in malformed]
    by_family: dict[str, list[LabeledRecord]] = {}
    for r in mal:
        if r.domain in seen:
            duplicates += 1
            continue
        seen.add(r.domain)
        by_family.setdefault(r.family, []).append(r)
    report["duplicates_dropped"] = duplicates
    if duplicates:
        log.info("dropped %d duplicate e2LDs (first occurrence kept)", duplicates)

    main, holdout, late = [], [], 0
    for fam in sorted(by_family):
        recs = by_family[fam]
        if cutoff_date is not None:
            dated = [r.first_seen for r in recs if r.first_seen is not None]
            if dated and min(dated) > cutoff_date:
                holdout.extend(recs)
                continue
            kept = [r for r in recs if r.first_seen is None or r.first_seen <= cutoff_date]
            late += len(recs) - len(kept)
            recs = kept
        if len(recs) > cap_per_family:
            pick = np.sort(rng.choice(len(recs), cap_per_family, replace=False))
            recs = [recs[i] for i in pick]
        main.extend(recs)
    report["late_records_dropped"] = late

    if balance and benign and main:
        n = min(len(benign), len(main))
        if len(benign) > n:
            benign = [benign[i] for i in np.sort(rng.choice(len(benign), n, replace=False))]
        elif len(main) > n:
            main = [main[i] for i in np.sort(rng.choice(len(main), n, replace=False))]
    report.update(benign=len(benign), malicious=len(main), holdout=len(holdout),
                  families=len({r.family for r in main}),
                  holdout_families=sorted({r.family for r in holdout}))
    return LabeledDataset(benign + main, holdout, report)


# -- folds ----------------------------------------------------------------------

@dataclass(frozen=True)
class FoldSpec:
    k: int = 5
    train: float = 0.75
    val: float = 0.05
    test: float = 0.20
    seed: int = 0

    def __post_init__(self):
        if abs(self.train + self.val + self.test - 1) > 1e-9:
            raise ValueError("fold fractions must sum to 1")
        if self.k < 2:
            raise ValueError("k must be at least 2")


@dataclass
class Fold:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def stratified_folds(ds: LabeledDataset, spec: FoldSpec = FoldSpec()) -> list[Fold]:
    """k folds stratified by (label, family); test chunks partition each stratum.

    The validation share is taken from the non-test part of each stratum so that
    val/test/train follow the configured fractions per stratum.
    """
    if len(ds) == 0:
        raise EmptySplit("empty dataset")
    rng = np.random.default_rng(spec.seed)
    strata: dict[tuple, list[int]] = {}
    for i, r in enumerate(ds.records):
        strata.setdefault(r.stratum, []).append(i)
    parts = [([], [], []) for _ in range(spec.k)]
    for key in sorted(strata):
        idx = np.array(strata[key])[rng.permutation(len(strata[key]))]
        if len(idx) < spec.k:
            log.warning("stratum %s has %d < k records; all go to training", key, len(idx))
            for tr, _, _ in parts:
                tr.extend(idx.tolist())
            continue
        chunks = np.array_split(idx, spec.k)
        n_val = int(round(len(idx) * spec.val))
        for f in range(spec.k):
            rest = np.concatenate([chunks[(f + j) % spec.k] for j in range(1, spec.k)])
            parts[f][2].extend(chunks[f].tolist())
            parts[f][1].extend(rest[:n_val].tolist())
            parts[f][0].extend(rest[n_val:].tolist())
    return [Fold(np.array(sorted(tr), dtype=int), np.array(sorted(va), dtype=int),
                 np.array(sorted(te), dtype=int)) for tr, va, te in parts]


# -- persistence ------------------------------------------------------------------

def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_records(path, records):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "label", "family", "first_seen"])
        for r in records:
            w.writerow([r.domain, r.label, r.family or "",
                        r.first_seen.isoformat() if r.first_seen else ""])


def read_records(path) -> list[LabeledRecord]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            seen = date.fromisoformat(row["first_seen"]) if row.get("first_seen") else None
            out.append(LabeledRecord(row["domain"], int(row["label"]), row["family"] or None, seen))
    return out


def save_dataset(out_dir, ds: LabeledDataset, folds: list[Fold], manifest: dict):
    """Write records, holdout, per-fold split index files and a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "records.csv", ds.records)
    write_records(out / "holdout.csv", ds.holdout)
    for f, fold in enumerate(folds):
        for name in ("train", "val", "test"):
            np.savetxt(out / f"fold{f}_{name}.txt", getattr(fold, name), fmt="%d")
    files = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    manifest = dict(manifest, report=ds.report, k=len(folds),
                    files={n: file_sha256(out / n) for n in files})
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def load_dataset(data_dir) -> tuple[LabeledDataset, list[Fold], dict]:
    d = Path(data_dir)
    manifest = json.loads((d / "manifest.json").read_text())
    ds = LabeledDataset(read_records(d / "records.csv"), read_records(d / "holdout.csv"),
                        manifest.get("report", {}))
    folds = []
    for f in range(manifest["k"]):
        folds.append(Fold(*(np.atleast_1d(np.loadtxt(d / f"fold{f}_{n}.txt", dtype=int))
                            for n in ("train", "val", "test"))))
    return ds, folds, manifest
