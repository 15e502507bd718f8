"""Synthetic stand-in data: benign word compounds vs. uniformly random malicious strings."""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .dataset import BENIGN, MALICIOUS, LabeledDataset, LabeledRecord

WORDS = """
able about account act action active add address admin age agent air alpha amazing
animal answer app apple area army art ask asset audio auto baby back bad bag bakery
ball bank bar base basic battle beach bear beauty bed beer best better big bike bill
bird black blog blue board boat body bond book boost boss box boy brain brand bread
bridge bright brother brown budget build bus business buy cable cafe cake call camera
camp capital car card care career cart case cash castle cat cell center chain chair
champion change channel charge chart chat cheap check chef chicken child china choice
church city class clean clear click client climate clinic clock cloud club coach coast
code coffee cold college color comfort common company computer cook cool copy corner
cost country county course court cover craft credit crowd cruise cup cyber daily dance
data date day deal dental design desk digital dinner direct doctor dog dollar door
dream dress drink drive early earth easy eat eco edge education electric energy engine
event expert express eye face fact fair faith family farm fashion fast father field
film final finance fire first fish fit flash flat flight floor flower fly food foot
force forest form forum free fresh friend front fruit fuel fun fund future game garden
gas gate gear gift girl glass global gold golf good green grid group growth guide hair
hall hand happy harbor health heart help hero high hill history home honey hope horse
host hotel house hub idea image info inn insight island job join journal joy juice jump
just key kid kind king kitchen lab lake land language laser law leader learn legal life
light line link lion list little live loan local lock logic long love lucky magic mail
main maker mall map market master media medical meet metal micro mind mobile model money
moon mother motor mountain move movie music name nation nature net network new news
night north note ocean office oil one online open orange order organic outdoor page
paint paper park part party pass path pay peace people pet phone photo piano pilot pink
pixel pizza place plan planet plant play plus point police pool port post power press
price prime print pro project property pure quality quick race radio rain real red
rent report research rest rich ride right ring river road rock room root royal run
safe sale salon sand school science score sea search secure seed sell service shop
show sign silver simple site sky smart snow social soft solar solution song sound south
space speed sport spring square star start state station steel stone store story
street studio style sun super support sure sweet system table talk tax team tech test
text theater thing think time today tool top touch tour town toy track trade train
travel tree trip true trust truck union unit urban user valley value video view
village vision voice wall watch water wave way web wedding well west white wild wind
window wine winter wise wood word work world yard year yellow young zone
""".split()


@dataclass
class SynthConfig:
    n_benign: int = 20000
    n_malicious: int = 20000
    seed: int = 0
    max_words: int = 6
    hyphen_prob: float = 0.3
    digit_suffix_prob: float = 0.1
    # name -> (symbols, min length, max length), lengths inclusive
    families: dict = field(default_factory=lambda: {
        "rand_alpha": (string.ascii_lowercase, 8, 16),
        "rand_alnum": (string.ascii_lowercase + string.digits, 8, 16),
        "rand_hex": ("0123456789abcdef", 12, 20),
        "rand_mixed": (string.ascii_lowercase, 12, 24),
    })


def benign_name(rng, cfg: SynthConfig) -> str:
    k = int(rng.integers(1, cfg.max_words + 1))
    words = [WORDS[i] for i in rng.integers(0, len(WORDS), k)]
    sep = "-" if rng.random() < cfg.hyphen_prob else ""
    name = sep.join(words)
    if rng.random() < cfg.digit_suffix_prob:
        name += str(int(rng.integers(1, 100)))
    return name


def random_name(rng, symbols: str, lo: int, hi: int) -> str:
    n = int(rng.integers(lo, hi + 1))
    return "".join(symbols[i] for i in rng.integers(0, len(symbols), n))


def generate(cfg: SynthConfig = SynthConfig()) -> LabeledDataset:
    """Unique benign compounds and random malicious strings, split evenly over families."""
    rng = np.random.default_rng(cfg.seed)
    seen: set[str] = set()
    records = []

    def draw(n, make, label, family=None):
        count, tries = 0, 0
        while count < n:
            tries += 1
            if tries > 50 * n + 1000:
                raise RuntimeError("could not draw enough distinct names; enlarge the generator")
            d = make()
            if d in seen or len(d) > 63:
                continue
            seen.add(d)
            records.append(LabeledRecord(d, label, family))
            count += 1

    draw(cfg.n_benign, lambda: benign_name(rng, cfg), BENIGN)
    fams = sorted(cfg.families)
    shares = np.full(len(fams), cfg.n_malicious // len(fams))
    shares[-1] += cfg.n_malicious - shares.sum()
    for fam, n in zip(fams, shares):
        sym, lo, hi = cfg.families[fam]
        draw(int(n), lambda: random_name(rng, sym, lo, hi), MALICIOUS, fam)
    return LabeledDataset(records, [], {"benign": cfg.n_benign, "malicious": cfg.n_malicious,
                                        "families": len(fams), "synthetic": True})
