"""Corpus-level caption metrics: BLEU-1..4, ROUGE-L, CIDEr, METEOR-lite.

All scores are reported on a 0-100 scale.  METEOR-lite runs the exact and
Porter-stem matching stages only (no synonym lexicon); CIDEr is the plain
TF-IDF cosine formulation without a length penalty.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, fields

from .text import porter_stem

__all__ = ["EvalSet", "MetricReport", "bleu", "rouge_l", "cider", "meteor_lite",
           "score_eval_set", "METRIC_COLUMNS"]

METRIC_COLUMNS = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE_L", "CIDEr")


@dataclass
class EvalSet:
    """Per image: one candidate token list and 1..n reference token lists."""

    entries: list  # list of (candidate: list[str], references: list[list[str]])

    def __post_init__(self):
        for cand, refs in self.entries:
            if not refs:
                raise ValueError("every image needs at least one reference")

    def __len__(self):
        return len(self.entries)


@dataclass
class MetricReport:
    """The seven scores of one evaluation run, each in [0, 100]."""

    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge_l: float
    cider: float

    def as_dict(self) -> dict:
        return {col: val for col, val in zip(METRIC_COLUMNS, self.as_row())}

    def as_row(self) -> list:
        return [self.bleu1, self.bleu2, self.bleu3, self.bleu4,
                self.meteor, self.rouge_l, self.cider]

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or not 0.0 <= v <= 100.0:
                raise ValueError(f"{f.name} out of range: {v}")


def _ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


# -- BLEU -----------------------------------------------------------------------------


def bleu(eval_set: EvalSet, n_max: int = 4) -> list:
    """Corpus BLEU-1..n_max with clipped counts and brevity penalty.

    Per order n, candidate n-gram counts are clipped at the maximum count in
    any of that image's references and pooled over the corpus; BLEU-k is the
    brevity penalty times the geometric mean of orders 1..k (zero if any
    order has zero matches).  Reference length r uses the closest-length
    reference, ties resolved toward the shorter one.
    """
    if not 1 <= n_max <= 4:
        raise ValueError(f"n_max must be in [1, 4], got {n_max}")
    if len(eval_set) == 0:
        raise ValueError("empty candidate corpus")
    clipped = [0] * n_max
    totals = [0] * n_max
    cand_len = 0
    ref_len = 0
    for cand, refs in eval_set.entries:
        cand_len += len(cand)
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, n_max + 1):
            counts = Counter(_ngrams(cand, n))
            max_ref = Counter()
            for ref in refs:
                for gram, c in Counter(_ngrams(ref, n)).items():
                    max_ref[gram] = max(max_ref[gram], c)
            clipped[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / max(cand_len, 1))
    precisions = [c / t if t > 0 else 0.0 for c, t in zip(clipped, totals)]
    scores = []
    for k in range(1, n_max + 1):
        if any(p == 0.0 for p in precisions[:k]):
            scores.append(0.0)
            continue
        mean = math.exp(sum(math.log(p) for p in precisions[:k]) / k)
        scores.append(100.0 * bp * mean)
    return scores


# -- ROUGE-L --------------------------------------------------------------------------


def _lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(eval_set: EvalSet, beta: float = 1.2) -> float:
    """Mean over images of the best LCS F-score against any reference."""
    if len(eval_set) == 0:
        raise ValueError("empty candidate corpus")
    total = 0.0
    for cand, refs in eval_set.entries:
        best = 0.0
        for ref in refs:
            if not cand or not ref:
                continue
            lcs = _lcs_length(cand, ref)
            if lcs == 0:
                continue
            p = lcs / len(cand)
            r = lcs / len(ref)
            f = (1 + beta ** 2) * p * r / (r + beta ** 2 * p)
            best = max(best, f)
        total += best
    return 100.0 * total / len(eval_set)


# -- CIDEr ----------------------------------------------------------------------------


def _tfidf_vector(tokens, n, idf):
    counts = Counter(_ngrams(tokens, n))
    total = sum(counts.values())
    if total == 0:
        return {}
    return {g: (c / total) * idf.get(g, idf["__default__"])
            for g, c in counts.items()}


def _cosine(a: dict, b: dict) -> float:
    if not a or not b:
        return 0.0
    dot = sum(v * b[g] for g, v in a.items() if g in b)
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def cider(eval_set: EvalSet, n_max: int = 4) -> float:
    """TF-IDF weighted n-gram cosine against the mean reference vector.

    idf(g) = ln(M / df) with document frequency counted over images whose
    reference set contains g, floored at one image so candidate-only n-grams
    stay finite.  Per-image score is the mean cosine over orders 1..n_max.
    """
    m = len(eval_set)
    if m == 0:
        raise ValueError("empty candidate corpus")
    total = 0.0
    for n in range(1, n_max + 1):
        df = Counter()
        for _, refs in eval_set.entries:
            seen = set()
            for ref in refs:
                seen.update(_ngrams(ref, n))
            df.update(seen)
        idf = {g: math.log(m / max(1.0, c)) for g, c in df.items()}
        idf["__default__"] = math.log(float(m))
        for cand, refs in eval_set.entries:
            cand_vec = _tfidf_vector(cand, n, idf)
            ref_vecs = [_tfidf_vector(r, n, idf) for r in refs]
            mean_ref = Counter()
            for vec in ref_vecs:
                for g, v in vec.items():
                    mean_ref[g] += v / len(ref_vecs)
            total += _cosine(cand_vec, dict(mean_ref))
    return 100.0 * total / (m * n_max)


# -- METEOR-lite ----------------------------------------------------------------------


def _greedy_align(cand, ref):
    """Two-stage greedy unigram alignment: exact token match, then stem match.

    Each candidate and reference position is used at most once.  Returns the
    list of (candidate index, reference index) pairs.
    """
    pairs = []
    used_c = [False] * len(cand)
    used_r = [False] * len(ref)
    for stage_key in (lambda w: w, porter_stem):
        ref_keys = [stage_key(w) for w in ref]
        for i, w in enumerate(cand):
            if used_c[i]:
                continue
            key = stage_key(w)
            for j, rk in enumerate(ref_keys):
                if not used_r[j] and rk == key:
                    pairs.append((i, j))
                    used_c[i] = True
                    used_r[j] = True
                    break
    return sorted(pairs)


def _chunk_count(pairs):
    """Number of maximal runs contiguous and monotone in both sentences."""
    pairs = sorted(pairs)
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite(eval_set: EvalSet, alpha: float = 0.9, beta: float = 3.0,
                gamma: float = 0.5) -> float:
    """Unigram F-mean with a fragmentation penalty, best reference per image.

    score = (1 - gamma * (chunks / matches)^beta) * P*R / (alpha*P + (1-alpha)*R)
    """
    if len(eval_set) == 0:
        raise ValueError("empty candidate corpus")
    total = 0.0
    for cand, refs in eval_set.entries:
        best = 0.0
        for ref in refs:
            if not cand or not ref:
                continue
            pairs = _greedy_align(cand, ref)
            m = len(pairs)
            if m == 0:
                continue
            p = m / len(cand)
            r = m / len(ref)
            f = p * r / (alpha * p + (1 - alpha) * r)
            penalty = gamma * (_chunk_count(pairs) / m) ** beta
            best = max(best, (1.0 - penalty) * f)
        total += best
    return 100.0 * total / len(eval_set)


def score_eval_set(eval_set: EvalSet) -> MetricReport:
    """All seven scores for one candidate corpus."""
    b = bleu(eval_set, 4)
    return MetricReport(
        bleu1=b[0], bleu2=b[1], bleu3=b[2], bleu4=b[3],
        meteor=meteor_lite(eval_set),
        rouge_l=rouge_l(eval_set),
        cider=cider(eval_set),
    )
