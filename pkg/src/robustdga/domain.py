"""Alphabet, e2LD validation, encoding and string distances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import EmptyDomain, UnknownSymbol

MAX_LEN = 63
PAD = "~"
HYPHEN = "-"
UNDERSCORE = "_"

# pad first; '_' is accepted on input but never emitted
CHARS = PAD + "abcdefghijklmnopqrstuvwxyz0123456789" + HYPHEN + UNDERSCORE


@dataclass(frozen=True)
class Alphabet:
    chars: str = CHARS

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("alphabet symbols must be distinct")
        if self.chars.count(PAD) != 1:
            raise ValueError("pad symbol must appear exactly once")

    def __len__(self) -> int:
        return len(self.chars)

    @property
    def pad_index(self) -> int:
        return self.chars.index(PAD)

    @property
    def hyphen_index(self) -> int:
        return self.chars.index(HYPHEN)

    def index(self, c: str) -> int:
        i = self.chars.find(c)
        if i < 0 or len(c) != 1:
            raise UnknownSymbol(f"symbol {c!r} is not in the alphabet")
        return i

    @property
    def valid_e2ld_subset(self) -> tuple[int, ...]:
        """Indices of a-z, 0-9 and '-'."""
        return tuple(i for i, c in enumerate(self.chars) if c.isalnum() or c == HYPHEN)

    @property
    def edge_subset(self) -> tuple[int, ...]:
        """Symbols allowed at the first and last position: a-z, 0-9."""
        return tuple(i for i, c in enumerate(self.chars) if c.isalnum())


ALPHABET = Alphabet()


@dataclass(frozen=True)
class EncodedDomain:
    indices: np.ndarray
    length: int


def validate_e2ld(text: str) -> list[str]:
    """Return the list of rule violations; an empty list means the label is valid.

    Rules: 1-63 characters from a-z, 0-9 and '-', no hyphen at either end and
    not a hyphen at both the third and fourth position.
    """
    violations = []
    if len(text) == 0:
        violations.append("empty")
    if len(text) > MAX_LEN:
        violations.append("too-long")
    if any(not (("a" <= c <= "z") or ("0" <= c <= "9") or c == HYPHEN) for c in text):
        violations.append("bad-character")
    if text.startswith(HYPHEN):
        violations.append("leading-hyphen")
    if text.endswith(HYPHEN):
        violations.append("trailing-hyphen")
    if len(text) >= 4 and text[2] == HYPHEN and text[3] == HYPHEN:
        violations.append("positions-3-4-hyphen")
    return violations


def is_valid_e2ld(text: str) -> bool:
    return not validate_e2ld(text)


def normalize(text: str) -> str:
    return text.strip().lower()


def encode(text: str, alphabet: Alphabet = ALPHABET) -> EncodedDomain:
    text = text.lower()
    if not text:
        raise EmptyDomain("cannot encode an empty domain")
    if len(text) > MAX_LEN:
        raise UnknownSymbol(f"domain longer than {MAX_LEN} characters: {text!r}")
    idx = np.full(MAX_LEN, alphabet.pad_index, dtype=np.int64)
    for i, c in enumerate(text):
        if c == PAD:
            raise UnknownSymbol("pad symbol is not allowed inside a domain")
        idx[i] = alphabet.index(c)
    return EncodedDomain(idx, len(text))


def decode(e: EncodedDomain | np.ndarray, alphabet: Alphabet = ALPHABET) -> str:
    indices = e.indices if isinstance(e, EncodedDomain) else e
    s = "".join(alphabet.chars[int(i)] for i in indices)
    return s.rstrip(PAD)


def encode_batch(texts: Iterable[str], alphabet: Alphabet = ALPHABET) -> np.ndarray:
    """Encode many domains into an (N, 63) index matrix."""
    lut = np.full(128, -1, dtype=np.int64)
    for i, c in enumerate(alphabet.chars):
        lut[ord(c)] = i
    texts = list(texts)
    out = np.full((len(texts), MAX_LEN), alphabet.pad_index, dtype=np.int64)
    for r, t in enumerate(texts):
        t = t.lower()
        if not t:
            raise EmptyDomain("cannot encode an empty domain")
        if len(t) > MAX_LEN:
            raise UnknownSymbol(f"domain longer than {MAX_LEN} characters: {t!r}")
        codes = np.frombuffer(t.encode("ascii", errors="replace"), dtype=np.uint8)
        row = lut[codes]
        if (row < 0).any() or PAD in t:
            bad = next(c for c in t if c == PAD or c not in alphabet.chars)
            raise UnknownSymbol(f"symbol {bad!r} is not in the alphabet")
        out[r, : len(t)] = row
    return out


def decode_batch(indices: np.ndarray, alphabet: Alphabet = ALPHABET) -> list[str]:
    table = np.array(list(alphabet.chars))
    return ["".join(row).rstrip(PAD) for row in table[indices]]


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def read_domain_list(path) -> Iterator[str]:
    """Yield domains from a UTF-8 list file, skipping blanks and '#' comments."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            yield line.lower()
