"""Synthetic email corpus with a planted malicious phrase.

Deterministic generator for end-to-end tests and experiments: filler-word
emails where the label is tied to the presence of the multi-piece token
"wiretransfer" (and, in the context-dependent variant, to external-sender
headers as well). The companion vocabulary tokenizes the planted word into
[wire, ##trans, ##fer] and covers every lowercase-letter word via single
characters, so no alphabetic word ever degrades to [UNK].
"""

from __future__ import annotations

import string

import numpy as np

from .mail import EmailRecord

PLANTED = "wiretransfer"
PLANTED_SYNONYM = "banktransfer"
SYNONYM_TABLE = {PLANTED: [PLANTED_SYNONYM]}

FILLERS = (
    "meeting report schedule project team notes review update budget plan "
    "office client agenda invoice order status weekly monthly summary draft "
    "release deadline lunch travel booking reminder thanks regards hello "
    "please attached document question answer call phone today tomorrow "
    "friday minutes"
).split()

INTERNAL_DOMAIN = "acme.com"
EXTERNAL_DOMAINS = ("partner.io", "vendor.net", "outside.org")


def synthetic_vocab() -> list[str]:
    """Vocabulary for the synthetic corpus (order fixed, deterministic)."""
    tokens = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    tokens += FILLERS
    tokens += ["wire", "##trans", "##fer", "bank"]
    tokens += list(string.ascii_lowercase)
    tokens += [f"##{c}" for c in string.ascii_lowercase]
    return tokens


def _addresses(rng: np.random.Generator, external: bool):
    n_to = int(rng.integers(1, 4))
    n_cc = int(rng.integers(0, 3))
    to = [f"user{rng.integers(100)}@{INTERNAL_DOMAIN}" for _ in range(n_to)]
    cc = [f"user{rng.integers(100)}@{INTERNAL_DOMAIN}" for _ in range(n_cc)]
    if external:
        dom = EXTERNAL_DOMAINS[int(rng.integers(len(EXTERNAL_DOMAINS)))]
        sender = f"user{rng.integers(100)}@{dom}"
    else:
        sender = f"user{rng.integers(100)}@{INTERNAL_DOMAIN}"
    return sender, to, cc


def _body(rng: np.random.Generator, planted: bool) -> str:
    n = int(rng.integers(8, 21))
    words = [FILLERS[int(rng.integers(len(FILLERS)))] for _ in range(n)]
    if planted:
        words.insert(int(rng.integers(0, n + 1)), PLANTED)
    return " ".join(words)


def _subject(rng: np.random.Generator) -> str:
    n = int(rng.integers(2, 5))
    return " ".join(FILLERS[int(rng.integers(len(FILLERS)))] for _ in range(n))


def _record(rng, planted: bool, external: bool, label: int) -> EmailRecord:
    sender, to, cc = _addresses(rng, external)
    return EmailRecord(subject=_subject(rng), body_text=_body(rng, planted),
                       from_addr=sender, to_addrs=to, cc_addrs=cc, label=label)


def make_corpus(n: int = 2000, malicious_frac: float = 0.1, seed: int = 0,
                context_dependent: bool = False) -> list[EmailRecord]:
    """Generate ``n`` records, ``malicious_frac`` of them labeled 1.

    Base corpus: malicious iff the planted token is present; header context
    random either way. Context-dependent variant: the planted token appears
    in three times as many records, but only externally-sent ones are
    malicious, so text alone cannot separate the classes.
    """
    rng = np.random.default_rng(seed)
    n_mal = round(n * malicious_frac)
    records: list[EmailRecord] = []
    if context_dependent:
        for _ in range(n_mal):
            records.append(_record(rng, planted=True, external=True, label=1))
        for _ in range(2 * n_mal):
            records.append(_record(rng, planted=True, external=False, label=0))
        for _ in range(n - 3 * n_mal):
            records.append(_record(rng, planted=False,
                                   external=bool(rng.integers(0, 2)), label=0))
    else:
        for _ in range(n_mal):
            records.append(_record(rng, planted=True,
                                   external=bool(rng.integers(0, 2)), label=1))
        for _ in range(n - n_mal):
            records.append(_record(rng, planted=False,
                                   external=bool(rng.integers(0, 2)), label=0))
    # interleave labels along the timeline so time-based splits stay mixed
    order = rng.permutation(len(records))
    base = np.datetime64("2025-01-01T00:00:00")
    for minute, i in enumerate(order):
        records[i].first_seen = str(base + np.timedelta64(minute, "m"))
    return [records[i] for i in order]
