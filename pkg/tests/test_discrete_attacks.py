import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustdga.discrete_attacks import (BeamConfig, hotflip, hyphen_dga, length_dga, maskdga_wb,
                                        replay_blackbox, run_string_attack, substitution_gains)
from robustdga.domain import ALPHABET, decode_batch, encode_batch, is_valid_e2ld, levenshtein
from robustdga.errors import EmptyAfterFiltering, InvalidDomain
from robustdga.tensor import softplus

from helpers import LinearSurrogate, random_domains, small_model

SYMBOLS = "abcdefghijklmnopqrstuvwxyz0123456789-"


def single_substitutions(domain):
    for p in range(len(domain)):
        for c in SYMBOLS:
            if c != domain[p]:
                s = domain[:p] + c + domain[p + 1:]
                if is_valid_e2ld(s):
                    yield p, s


def true_loss(model, domains):
    return softplus(-model.logits_from_indices(encode_batch(domains)))


def test_hotflip_single_flip_equals_brute_force():
    hits = 0
    for case in range(100):
        m = LinearSurrogate(case)
        dom = random_domains(np.random.default_rng(case), 1, 2, 25)[0]
        cands = [s for _, s in single_substitutions(dom)]
        brute = cands[int(np.argmax(true_loss(m, cands)))]
        got = decode_batch(hotflip(m, encode_batch([dom]), 1))[0]
        hits += got == brute
    assert hits == 100


def test_hotflip_zero_flips_is_identity():
    m = small_model(0)
    rows = encode_batch(["example", "abc-def"])
    assert np.array_equal(hotflip(m, rows, 0), rows)
    assert np.array_equal(hotflip(m, rows, [0, 0]), rows)


def test_hotflip_respects_flip_budget_and_validity():
    m = small_model(1)
    doms = random_domains(np.random.default_rng(1), 40, 1, 30, hyphen_rate=0.3)
    flips = np.random.default_rng(2).integers(0, 6, len(doms))
    out = decode_batch(hotflip(m, encode_batch(doms), flips, beam_width=4))
    for o, d, n in zip(out, doms, flips):
        assert is_valid_e2ld(o)
        assert len(o) == len(d)
        assert sum(a != b for a, b in zip(o, d)) <= n
        if n == 0:
            assert o == d


def test_hotflip_never_worse_than_a_single_flip_round():
    m = small_model(2)
    rows = encode_batch(random_domains(np.random.default_rng(3), 20, 5, 20))
    one = true_loss(m, decode_batch(hotflip(m, rows, 1)))
    three = true_loss(m, decode_batch(hotflip(m, rows, 3)))
    assert (three >= one - 1e-12).all()


def test_substitution_gains_exact_on_linear_model():
    m = LinearSurrogate(4)
    dom = "gain-check7"
    rows = encode_batch([dom])
    z0 = m.logits_from_indices(rows)[0]
    gains = substitution_gains(m, rows)[0]
    dl = 1.0 / (1.0 + math.exp(-z0)) - 1.0
    for p, s in single_substitutions(dom):
        dz = m.logits_from_indices(encode_batch([s]))[0] - z0
        assert gains[p, ALPHABET.index(s[p])] == pytest.approx(dl * dz, rel=1e-9, abs=1e-12)
    assert np.isneginf(gains[0, ALPHABET.hyphen_index])
    assert np.isneginf(gains[len(dom), :]).all()


def test_beam_config_validation():
    with pytest.raises(ValueError):
        BeamConfig(flips=-1)
    with pytest.raises(ValueError):
        BeamConfig(beam_width=0)


def test_maskdga_counts():
    m = small_model(5)
    out = decode_batch(maskdga_wb(m, encode_batch(["q", "abcdefgh", "abcdefghi"])))
    assert sum(a != b for a, b in zip(out[0], "q")) == 1
    assert sum(a != b for a, b in zip(out[1], "abcdefgh")) == 4
    assert sum(a != b for a, b in zip(out[2], "abcdefghi")) == 5
    assert all(is_valid_e2ld(s) for s in out)


def test_maskdga_positions_match_exhaustive_ranking():
    for case in range(30):
        m = LinearSurrogate(100 + case)
        dom = random_domains(np.random.default_rng(case), 1, 3, 25, hyphen_rate=0.0)[0]
        best = {}
        for p, s in single_substitutions(dom):
            loss = float(true_loss(m, [s])[0])
            if loss > best.get(p, (-np.inf,))[0]:
                best[p] = (loss, s[p])
        ranked = sorted(best, key=lambda p: -best[p][0])
        k = math.ceil(len(dom) / 2)
        out = decode_batch(maskdga_wb(m, encode_batch([dom])))[0]
        changed = {p for p in range(len(dom)) if out[p] != dom[p]}
        assert changed == set(ranked[:k])
        if not (out[2:4] == "--" or {2, 3} <= changed):
            assert all(out[p] == best[p][1] for p in changed)


def test_maskdga_resolves_hyphen_clash():
    # a model that rewards hyphens everywhere must not emit '--' at positions 3-4
    m = LinearSurrogate(6)
    m.A[:] = 0.0
    m.A[:, :] = -m.W[ALPHABET.hyphen_index]
    out = decode_batch(maskdga_wb(m, encode_batch(["abcdefgh", "abcdefghij"])))
    for s in out:
        assert is_valid_e2ld(s) and "-" in s


def test_hyphen_dga_examples():
    rng = np.random.default_rng(0)
    s, flagged = hyphen_dga("abcdefgh", rng)
    assert not flagged and s.count("-") == 4 and is_valid_e2ld(s)
    assert hyphen_dga("ab", rng) == ("ab", True)
    assert hyphen_dga("a", rng) == ("a", True)
    s, _ = hyphen_dga("abc", rng)
    assert s == "a-c"
    with pytest.raises(InvalidDomain):
        hyphen_dga("-abc", rng)


def test_hyphen_dga_small_inputs_replace_all_eligible():
    rng = np.random.default_rng(1)
    # length 5: interior 1..3 but 2 and 3 cannot both be hyphens
    for _ in range(50):
        s, _ = hyphen_dga("abcde", rng)
        assert s.count("-") == 2 and is_valid_e2ld(s)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_hyphen_dga_always_valid(seed):
    rng = np.random.default_rng(seed)
    dom = random_domains(rng, 1, 2, 63, hyphen_rate=0.3)[0]
    s, flagged = hyphen_dga(dom, rng)
    assert is_valid_e2ld(s) and len(s) == len(dom)
    assert flagged or s.count("-") >= min(len(dom) // 2, 1)


def test_length_dga_examples():
    assert length_dga("example") == "i" * 41 + "example"
    assert len(length_dga("example")) == 48
    assert length_dga("x" * 48) == "x" * 48
    assert length_dga("y" * 60) == "y" * 60
    with pytest.raises(InvalidDomain):
        length_dga("-abc")


def test_length_dga_repairs_clash_from_one_symbol_prefix():
    dom = "a--" + "b" * 44
    assert len(dom) == 47 and is_valid_e2ld(dom)
    out = length_dga(dom)
    assert len(out) == 48 and is_valid_e2ld(out)
    assert out == "ia-i" + "b" * 44


def test_string_attack_helpers():
    rng = np.random.default_rng(3)
    doms = random_domains(rng, 200, 1, 63)
    out = run_string_attack(length_dga, doms)
    assert all(is_valid_e2ld(s) and len(s) == max(48, len(d)) for s, d in zip(out, doms))
    out = run_string_attack(hyphen_dga, doms, rng)
    assert all(is_valid_e2ld(s) for s in out)
    assert all(levenshtein(s, d) <= len(d) // 2 for s, d in zip(out, doms))


def test_replay_blackbox(tmp_path):
    m = small_model(7)
    p = tmp_path / "samples.txt"
    p.write_text("abcxyz\n" * 5, encoding="utf-8")
    r = replay_blackbox(p, m)
    assert r.sample_count == 5 and r.unique_fraction == pytest.approx(0.2)
    p.write_text("www.Example.com\nbad_name\n-bad\nfoo-bar\n", encoding="utf-8")
    r = replay_blackbox(p, m, "mix")
    assert r.sample_count == 2 and r.attack_id == "mix"
    p.write_text("", encoding="utf-8")
    with pytest.raises(EmptyAfterFiltering):
        replay_blackbox(p, m)
