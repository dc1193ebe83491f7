"""Corpus-level translation quality metrics: BLEU and chrF++.

Both metrics are pure functions over (hypothesis, reference) pairs with a
single reference per hypothesis.  BLEU follows the original corpus-pooled
definition (clipped n-gram precisions, geometric mean, brevity penalty) and
is reported on [0, 1]; chrF++ combines character n-grams up to order 6 with
word n-grams up to order 2 at beta = 2 and is reported on [0, 100].
"""
from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import MetricError

BLEU_MAX_ORDER = 4
CHRF_CHAR_ORDER = 6
CHRF_WORD_ORDER = 2
CHRF_BETA = 2.0


def tokenize(text: str) -> list[str]:
    """NFC-normalize then split on Unicode whitespace.

    One uniform rule for every language keeps token and character counts
    comparable across the corpus; no language-specific tokenizers.
    """
    return unicodedata.normalize("NFC", text).split()


def _validate_pairs(hypotheses: Sequence, references: Sequence) -> None:
    if len(hypotheses) != len(references):
        raise MetricError(
            f"hypothesis/reference length mismatch: "
            f"{len(hypotheses)} vs {len(references)}"
        )
    if not hypotheses:
        raise MetricError("at least one (hypothesis, reference) pair is required")


def _ngrams(tokens: Sequence[str], order: int) -> Counter:
    return Counter(
        tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1)
    )


@dataclass(frozen=True)
class BleuStatistics:
    """Everything behind a BLEU score, exposed for reports and audits.

    ``precisions`` holds raw corpus-pooled (clipped matches, total) pairs
    per order, before any smoothing.
    """

    score: float
    precisions: tuple[tuple[int, int], ...]
    hyp_length: int
    ref_length: int
    brevity_penalty: float


def bleu_statistics(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_order: int = BLEU_MAX_ORDER,
    add_one: bool = False,
) -> BleuStatistics:
    """Corpus BLEU with its underlying n-gram statistics.

    Orders with zero hypothesis n-grams anywhere in the corpus are dropped
    from the geometric mean, so identity corpora of short sentences still
    score 1.  ``add_one`` smooths orders >= 2 for tiny corpora; the default
    is the unsmoothed definition.
    """
    _validate_pairs(hypotheses, references)
    counts: list[tuple[int, int]] = []
    for order in range(1, max_order + 1):
        correct = 0
        total = 0
        for hyp, ref in zip(hypotheses, references):
            hyp_grams = _ngrams(hyp, order)
            total += sum(hyp_grams.values())
            if not hyp_grams:
                continue
            ref_grams = _ngrams(ref, order)
            correct += sum(
                min(count, ref_grams[gram]) for gram, count in hyp_grams.items()
            )
        counts.append((correct, total))

    hyp_length = sum(len(h) for h in hypotheses)
    ref_length = sum(len(r) for r in references)
    if hyp_length == 0:
        brevity_penalty = 0.0
    elif hyp_length >= ref_length:
        brevity_penalty = 1.0
    else:
        brevity_penalty = math.exp(1.0 - ref_length / hyp_length)

    log_sum = 0.0
    effective = 0
    zero_precision = False
    for order_index, (correct, total) in enumerate(counts, start=1):
        if add_one and order_index >= 2:
            correct += 1
            total += 1
        if total == 0:
            continue
        effective += 1
        if correct == 0:
            zero_precision = True
            break
        log_sum += math.log(correct / total)

    if zero_precision or effective == 0 or hyp_length == 0:
        score = 0.0
    else:
        score = brevity_penalty * math.exp(log_sum / effective)
    return BleuStatistics(
        score=score,
        precisions=tuple(counts),
        hyp_length=hyp_length,
        ref_length=ref_length,
        brevity_penalty=brevity_penalty,
    )


def corpus_bleu(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_order: int = BLEU_MAX_ORDER,
    add_one: bool = False,
) -> float:
    """Corpus BLEU on [0, 1]; token lists in, single reference each."""
    return bleu_statistics(hypotheses, references, max_order, add_one).score


def _char_ngrams(text: str, order: int) -> Counter:
    squeezed = "".join(text.split())
    return Counter(
        squeezed[i : i + order] for i in range(len(squeezed) - order + 1)
    )


def chrf_pp(
    hypotheses: Sequence[str],
    references: Sequence[str],
    char_order: int = CHRF_CHAR_ORDER,
    word_order: int = CHRF_WORD_ORDER,
    beta: float = CHRF_BETA,
) -> float:
    """chrF++ on [0, 100], corpus-aggregated.

    Per-order match statistics are summed over the corpus first; the final
    score macro-averages the per-order F(beta) values across every order
    that occurs on either side.
    """
    _validate_pairs(hypotheses, references)
    orders: list[tuple[str, int]] = [("char", n) for n in range(1, char_order + 1)]
    orders += [("word", n) for n in range(1, word_order + 1)]
    totals = {key: [0, 0, 0] for key in orders}  # [hyp, ref, matched]
    for hyp, ref in zip(hypotheses, references):
        hyp_words = hyp.split()
        ref_words = ref.split()
        for kind, order in orders:
            if kind == "char":
                hyp_grams = _char_ngrams(hyp, order)
                ref_grams = _char_ngrams(ref, order)
            else:
                hyp_grams = _ngrams(hyp_words, order)
                ref_grams = _ngrams(ref_words, order)
            slot = totals[(kind, order)]
            slot[0] += sum(hyp_grams.values())
            slot[1] += sum(ref_grams.values())
            slot[2] += sum(
                min(count, ref_grams[gram]) for gram, count in hyp_grams.items()
            )

    beta_sq = beta * beta
    f_scores: list[float] = []
    for key in orders:
        hyp_total, ref_total, matched = totals[key]
        if hyp_total == 0 and ref_total == 0:
            continue
        precision = matched / hyp_total if hyp_total else 0.0
        recall = matched / ref_total if ref_total else 0.0
        denominator = beta_sq * precision + recall
        if denominator > 0:
            f_scores.append((1 + beta_sq) * precision * recall / denominator)
        else:
            f_scores.append(0.0)
    if not f_scores:
        return 0.0
    return 100.0 * sum(f_scores) / len(f_scores)
