"""Corpus-level BLEU, sentence/corpus RIBES, and two-system comparison.

Both metrics operate on whitespace token sequences after NFC normalization,
single reference per hypothesis. BLEU is the unsmoothed 4-gram geometric mean
with a brevity penalty, reported on the 0-100 scale. RIBES scores word-order
agreement: normalized Kendall's tau over a one-to-one word alignment, damped
by unigram precision (alpha=0.25) and a brevity penalty (beta=0.10), averaged
over sentences.
"""

from __future__ import annotations

import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

TokenSeq = list[str]

RIBES_ALPHA = 0.25
RIBES_BETA = 0.10


class MetricsError(Exception):
    pass


class LengthMismatch(MetricsError):
    pass


class EmptyCorpus(MetricsError):
    pass


def tokenize(text: str) -> TokenSeq:
    """NFC-normalize, trim, and split on whitespace runs."""
    return unicodedata.normalize("NFC", text).split()


@dataclass(frozen=True)
class BleuReport:
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    score: float


def _ngram_counts(tokens: TokenSeq, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(hyps: Sequence[TokenSeq], refs: Sequence[TokenSeq]) -> BleuReport:
    """Corpus BLEU with clipped 1..4-gram precisions.

    An n whose n-gram pool is empty (all hypotheses shorter than n) scores a
    zero precision, and any zero precision makes the score 0.
    """
    if len(hyps) != len(refs):
        raise LengthMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise EmptyCorpus("no sentences to score")

    matches = [0] * 4
    guesses = [0] * 4
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    for hyp, ref in zip(hyps, refs):
        for n in range(1, 5):
            hyp_grams = _ngram_counts(hyp, n)
            guesses[n - 1] += sum(hyp_grams.values())
            overlap = hyp_grams & _ngram_counts(ref, n)
            matches[n - 1] += sum(overlap.values())

    precisions = tuple(
        matches[i] / guesses[i] if guesses[i] > 0 else 0.0 for i in range(4)
    )
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len > ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len)
    if min(precisions) == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / 4.0)
    return BleuReport(
        precisions=precisions,  # type: ignore[arg-type]
        brevity_penalty=bp,
        hyp_len=hyp_len,
        ref_len=ref_len,
        score=score,
    )


def _occurrences(gram: tuple[str, ...], tokens: TokenSeq) -> int:
    k = len(gram)
    return sum(1 for i in range(len(tokens) - k + 1) if tuple(tokens[i : i + k]) == gram)


def _first_position(gram: tuple[str, ...], tokens: TokenSeq) -> int:
    k = len(gram)
    for i in range(len(tokens) - k + 1):
        if tuple(tokens[i : i + k]) == gram:
            return i
    raise ValueError("gram not present")


def ribes_align(hyp: TokenSeq, ref: TokenSeq) -> list[tuple[int, int]]:
    """One-to-one word alignment, returned in hypothesis order.

    A hypothesis word aligns when it occurs exactly once in both sentences.
    Repeated words are disambiguated by the smallest context window (the word
    plus w neighbours to the right or to the left, both checked at each w)
    that occurs exactly once in both sentences; if the two directions match
    uniquely but point at different reference positions the word stays
    unaligned, as does any word whose reference position was already claimed.
    """
    hyp_counts = Counter(hyp)
    ref_counts = Counter(ref)
    pairs: list[tuple[int, int]] = []
    claimed: set[int] = set()

    for i, word in enumerate(hyp):
        if ref_counts[word] == 0:
            continue
        pos: int | None
        if hyp_counts[word] == 1 and ref_counts[word] == 1:
            pos = ref.index(word)
        else:
            pos = _disambiguate(hyp, ref, i)
        if pos is None or pos in claimed:
            continue
        claimed.add(pos)
        pairs.append((i, pos))
    return pairs


def _disambiguate(hyp: TokenSeq, ref: TokenSeq, i: int) -> int | None:
    for width in range(1, len(hyp)):
        right = tuple(hyp[i : i + width + 1]) if i + width < len(hyp) else None
        left = tuple(hyp[i - width : i + 1]) if i - width >= 0 else None
        if right is None and left is None:
            return None
        candidates: list[int] = []
        if right is not None and _occurrences(right, hyp) == 1 and _occurrences(right, ref) == 1:
            candidates.append(_first_position(right, ref))
        if left is not None and _occurrences(left, hyp) == 1 and _occurrences(left, ref) == 1:
            candidates.append(_first_position(left, ref) + width)
        if candidates:
            if len(candidates) == 2 and candidates[0] != candidates[1]:
                return None
            return candidates[0]
    return None


def _count_inversions(values: list[int]) -> int:
    # Merge sort; the alignment is one-to-one so values are distinct.
    if len(values) < 2:
        return 0
    mid = len(values) // 2
    left, right = values[:mid], values[mid:]
    inv = _count_inversions(left) + _count_inversions(right)
    merged = []
    li = ri = 0
    while li < len(left) and ri < len(right):
        if left[li] <= right[ri]:
            merged.append(left[li])
            li += 1
        else:
            merged.append(right[ri])
            ri += 1
            inv += len(left) - li
    values[:] = merged + left[li:] + right[ri:]
    return inv


def kendall_tau(ranks: Sequence[int]) -> float:
    """Kendall's tau of a distinct-rank sequence against sorted order."""
    n = len(ranks)
    if n < 2:
        raise ValueError("tau needs at least two ranks")
    possible = n * (n - 1) // 2
    concordant = possible - _count_inversions(list(ranks))
    return 2.0 * concordant / possible - 1.0


@dataclass(frozen=True)
class RibesSentence:
    aligned: int
    nkt: float
    unigram_precision: float
    brevity_penalty: float
    score: float


@dataclass(frozen=True)
class RibesReport:
    sentences: tuple[RibesSentence, ...]
    score: float


def ribes_sentence(hyp: TokenSeq, ref: TokenSeq) -> RibesSentence:
    """Score one sentence; fewer than two aligned words scores 0."""
    pairs = ribes_align(hyp, ref)
    n = len(pairs)
    if not hyp:
        return RibesSentence(aligned=0, nkt=0.0, unigram_precision=0.0,
                             brevity_penalty=0.0, score=0.0)
    precision = n / len(hyp)
    bp = min(1.0, math.exp(1.0 - len(ref) / len(hyp)))
    if n < 2:
        return RibesSentence(aligned=n, nkt=0.0, unigram_precision=precision,
                             brevity_penalty=bp, score=0.0)
    nkt = (kendall_tau([r for _, r in pairs]) + 1.0) / 2.0
    score = nkt * precision**RIBES_ALPHA * bp**RIBES_BETA
    return RibesSentence(aligned=n, nkt=nkt, unigram_precision=precision,
                         brevity_penalty=bp, score=score)


def ribes_corpus(hyps: Sequence[TokenSeq], refs: Sequence[TokenSeq]) -> RibesReport:
    """Unweighted mean of sentence scores."""
    if len(hyps) != len(refs):
        raise LengthMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise EmptyCorpus("no sentences to score")
    sentences = tuple(ribes_sentence(h, r) for h, r in zip(hyps, refs))
    return RibesReport(
        sentences=sentences,
        score=sum(s.score for s in sentences) / len(sentences),
    )


@dataclass(frozen=True)
class SystemScores:
    label: str
    bleu: BleuReport
    ribes: RibesReport


@dataclass(frozen=True)
class EvalReport:
    language: str
    test_set: str
    original: SystemScores
    corrected: SystemScores
    delta_bleu: float


def compare_systems(
    original_hyps: Sequence[TokenSeq],
    corrected_hyps: Sequence[TokenSeq],
    refs: Sequence[TokenSeq],
    *,
    language: str = "",
    test_set: str = "",
) -> EvalReport:
    """Score two systems against one reference set; delta is corrected - original."""
    if len(original_hyps) != len(refs) or len(corrected_hyps) != len(refs):
        raise LengthMismatch(
            f"hypothesis/reference lengths differ: "
            f"{len(original_hyps)}/{len(corrected_hyps)} vs {len(refs)}"
        )
    original = SystemScores(
        label="Original",
        bleu=bleu_corpus(original_hyps, refs),
        ribes=ribes_corpus(original_hyps, refs),
    )
    corrected = SystemScores(
        label="Corrected",
        bleu=bleu_corpus(corrected_hyps, refs),
        ribes=ribes_corpus(corrected_hyps, refs),
    )
    return EvalReport(
        language=language,
        test_set=test_set,
        original=original,
        corrected=corrected,
        delta_bleu=corrected.bleu.score - original.bleu.score,
    )


def render_eval_table(report: EvalReport) -> str:
    test_set = report.test_set or "-"
    rows = [
        ("Model", "Test Set", "BLEU", "RIBES", "Δ BLEU"),
        (report.original.label, test_set,
         f"{report.original.bleu.score:.2f}",
         f"{report.original.ribes.score:.4f}", "—"),
        (report.corrected.label, test_set,
         f"{report.corrected.bleu.score:.2f}",
         f"{report.corrected.ribes.score:.4f}",
         f"{report.delta_bleu:+.2f}"),
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = []
    if report.language:
        lines.append(report.language)
    for r in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    return "\n".join(lines) + "\n"


def eval_to_json(report: EvalReport) -> dict:
    def system_dict(s: SystemScores) -> dict:
        return {
            "bleu": round(s.bleu.score, 2),
            "ribes": round(s.ribes.score, 4),
            "bleu_precisions": [round(p, 6) for p in s.bleu.precisions],
            "brevity_penalty": round(s.bleu.brevity_penalty, 6),
            "hyp_len": s.bleu.hyp_len,
            "ref_len": s.bleu.ref_len,
        }

    return {
        "language": report.language,
        "test_set": report.test_set,
        "original": system_dict(report.original),
        "corrected": system_dict(report.corrected),
        "delta_bleu": round(report.delta_bleu, 2),
    }


def render_single_system(label: str, bleu: BleuReport, ribes: RibesReport) -> str:
    return (
        f"{label}: BLEU {bleu.score:.2f}  RIBES {ribes.score:.4f}  "
        f"(BP {bleu.brevity_penalty:.4f}, hyp {bleu.hyp_len}, ref {bleu.ref_len})\n"
    )


def dump_json(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2) + "\n"
