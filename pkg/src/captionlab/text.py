"""Caption text handling: tokenization, Porter stemming, vocabulary."""

from __future__ import annotations

import re
from collections import Counter

__all__ = [
    "tokenize",
    "porter_stem",
    "Vocabulary",
    "PAD_ID",
    "START_ID",
    "END_ID",
    "UNK_ID",
    "PAD",
    "START",
    "END",
    "UNK",
]

PAD, START, END, UNK = "<pad>", "<start>", "<end>", "<unk>"
PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3

# Alphanumeric runs, allowing a single apostrophe or hyphen between runs
# ("dog's", "black-and-white"); everything else is separator punctuation.
_TOKEN_RE = re.compile(r"[^\W_]+(?:['\-][^\W_]+)*", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word tokens, dropping outer punctuation."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Bidirectional token/id map with fixed reserved ids 0..3.

    Non-reserved ids are assigned by descending corpus frequency with
    lexicographic tie-breaking, so identical corpora always produce
    identical id assignments.
    """

    def __init__(self, tokens=()):
        self._id_to_token = [PAD, START, END, UNK] + list(tokens)
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, token_lists, min_count: int = 1) -> "Vocabulary":
        """Vocabulary of tokens occurring at least ``min_count`` times."""
        if min_count < 1:
            raise ValueError(f"min_count must be >= 1, got {min_count}")
        counts = Counter()
        for tokens in token_lists:
            counts.update(tokens)
        kept = [t for t, c in counts.items() if c >= min_count]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(kept)

    def __len__(self):
        return len(self._id_to_token)

    def __contains__(self, token):
        return token in self._token_to_id

    def token_id(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self._id_to_token[token_id]

    @property
    def tokens(self) -> list[str]:
        return list(self._id_to_token)

    def encode(self, tokens, add_specials: bool = True) -> list[int]:
        ids = [self.token_id(t) for t in tokens]
        return [START_ID] + ids + [END_ID] if add_specials else ids

    def decode(self, ids, strip_specials: bool = True) -> list[str]:
        reserved = {PAD_ID, START_ID, END_ID}
        out = []
        for i in ids:
            if strip_specials and i in reserved:
                continue
            out.append(self._id_to_token[i])
        return out


# -- Porter stemmer -------------------------------------------------------------
#
# The classic suffix-stripping algorithm, used by the METEOR stage-two
# (stem) matcher.  Words are measured as [C](VC)^m[V]; rules fire by
# longest matching suffix within each step.

_VOWELS = "aeiou"


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    """Number of VC sequences in [C](VC)^m[V]."""
    m = 0
    prev_vowel = False
    for i in range(len(stem)):
        if _is_consonant(stem, i):
            if prev_vowel:
                m += 1
            prev_vowel = False
        else:
            prev_vowel = True
    return m


def _contains_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _is_consonant(word, len(word) - 1)
    )


def _ends_cvc(word: str) -> bool:
    """Consonant-vowel-consonant ending where the final consonant is not w/x/y."""
    if len(word) < 3:
        return False
    return (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
        and word[-1] not in "wxy"
    )


def _replace(word, suffix, repl, condition):
    """If ``word`` ends with ``suffix`` and the stem passes ``condition``,
    return stem+repl, else None."""
    if not word.endswith(suffix):
        return None
    stem = word[: len(word) - len(suffix)]
    if condition(stem):
        return stem + repl
    return word  # suffix matched but condition failed: rule consumed, no change


def _apply_rules(word, rules):
    """First rule whose suffix matches wins (rules are longest-first)."""
    for suffix, repl, condition in rules:
        if word.endswith(suffix):
            res = _replace(word, suffix, repl, condition)
            return res
    return word


def _step1a(word):
    for suffix, repl in (("sses", "ss"), ("ies", "i"), ("ss", "ss"), ("s", "")):
        if word.endswith(suffix):
            return word[: len(word) - len(suffix)] + repl
    return word


def _step1b(word):
    if word.endswith("eed"):
        stem = word[:-3]
        return stem + "ee" if _measure(stem) > 0 else word
    fired = None
    if word.endswith("ed") and _contains_vowel(word[:-2]):
        fired = word[:-2]
    elif word.endswith("ing") and _contains_vowel(word[:-3]):
        fired = word[:-3]
    if fired is None:
        return word
    word = fired
    if word.endswith(("at", "bl", "iz")):
        return word + "e"
    if _ends_double_consonant(word) and word[-1] not in "lsz":
        return word[:-1]
    if _measure(word) == 1 and _ends_cvc(word):
        return word + "e"
    return word


def _step1c(word):
    if word.endswith("y") and _contains_vowel(word[:-1]):
        return word[:-1] + "i"
    return word


_STEP2_RULES = [
    ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
    ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
    ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
    ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
]

_STEP3_RULES = [
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""), ("ness", ""),
]

_STEP4_SUFFIXES = [
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
    "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
]


def _longest_first(rules):
    return sorted(rules, key=lambda r: -len(r[0]))


_STEP2_SORTED = _longest_first([(s, r, lambda st: _measure(st) > 0) for s, r in _STEP2_RULES])
_STEP3_SORTED = _longest_first([(s, r, lambda st: _measure(st) > 0) for s, r in _STEP3_RULES])


def _step4(word):
    for suffix in sorted(_STEP4_SUFFIXES, key=len, reverse=True):
        if word.endswith(suffix):
            stem = word[: len(word) - len(suffix)]
            if suffix == "ion" and not stem.endswith(("s", "t")):
                return word
            return stem if _measure(stem) > 1 else word
    return word


def _step5a(word):
    if word.endswith("e"):
        stem = word[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            return stem
    return word


def _step5b(word):
    if _measure(word) > 1 and _ends_double_consonant(word) and word.endswith("l"):
        return word[:-1]
    return word


def porter_stem(word: str) -> str:
    """Stem a lowercase word; words of length <= 2 are left unchanged."""
    if len(word) <= 2:
        return word
    word = _step1a(word)
    word = _step1b(word)
    word = _step1c(word)
    word = _apply_rules(word, _STEP2_SORTED)
    word = _apply_rules(word, _STEP3_SORTED)
    word = _step4(word)
    word = _step5a(word)
    word = _step5b(word)
    return word
