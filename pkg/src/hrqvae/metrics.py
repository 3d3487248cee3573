"""Corpus BLEU and the diversity-aware scores built on it.

BLEU follows the usual corpus definition: clipped n-gram counts for n = 1..4
pooled over all segments, a geometric mean with uniform weights, and a brevity
penalty against the closest reference length (ties go to the shorter one). No
smoothing is applied, so a corpus with no matching 4-gram scores 0.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .exceptions import ConfigError, UsageError

__all__ = [
    "Corpus",
    "MetricReport",
    "tokenize",
    "corpus_bleu",
    "self_bleu",
    "ibleu",
    "pairwise_bleu",
    "round_half_up",
    "read_segments",
    "metric_report",
]

MAX_ORDER = 4


def tokenize(text, lowercase=True):
    return (text.lower() if lowercase else text).split()


@dataclass
class Corpus:
    """Hypotheses with one or more references each (all pre-tokenized)."""

    segments: list
    references: list

    def __post_init__(self):
        if len(self.segments) != len(self.references):
            raise UsageError("every segment needs its own reference list")
        for refs in self.references:
            if len(refs) < 1:
                raise UsageError("every segment needs at least one reference")

    @classmethod
    def from_single(cls, hypotheses, references):
        return cls(list(hypotheses), [[r] for r in references])


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_length(hyp_len, ref_lens):
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def corpus_bleu(corpus):
    """Corpus BLEU on a 0-100 scale."""
    if not corpus.segments:
        raise UsageError("cannot score an empty corpus")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, refs in zip(corpus.segments, corpus.references):
        hyp_len += len(hyp)
        ref_len += _closest_length(len(hyp), [len(r) for r in refs])
        for n in range(1, MAX_ORDER + 1):
            counts = _ngrams(hyp, n)
            max_ref = Counter()
            for ref in refs:
                max_ref |= _ngrams(ref, n)
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if min(matches) == 0:
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / MAX_ORDER
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_precision)


def self_bleu(outputs, inputs):
    """BLEU of ``outputs`` against the ``inputs`` they were generated from."""
    return corpus_bleu(Corpus.from_single(outputs, inputs))


def ibleu(bleu_refs, bleu_inputs, alpha=0.8):
    """``alpha * bleu_refs - (1 - alpha) * bleu_inputs``."""
    if not 0 <= alpha <= 1:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha!r}")
    for name, v in (("bleu_refs", bleu_refs), ("bleu_inputs", bleu_inputs)):
        if not 0 <= v <= 100:
            raise ConfigError(f"{name} must lie in [0, 100], got {v!r}")
    return alpha * bleu_refs - (1.0 - alpha) * bleu_inputs


def pairwise_bleu(candidate_sets):
    """Mean BLEU over ordered pairs of candidate lists.

    ``candidate_sets[s]`` holds the ``m`` candidates produced for input ``s``.
    Candidate list ``i`` is the ``i``-th candidate of every input; each
    ordered pair ``(i, j)`` with ``i != j`` scores list ``i`` against list
    ``j`` as single references.
    """
    if not candidate_sets:
        raise UsageError("no candidate sets given")
    m = len(candidate_sets[0])
    if m < 2 or any(len(s) != m for s in candidate_sets):
        raise UsageError("every input needs the same number (>= 2) of candidates")
    lists = [[s[i] for s in candidate_sets] for i in range(m)]
    scores = [
        corpus_bleu(Corpus.from_single(lists[i], lists[j])) for i in range(m) for j in range(m) if i != j
    ]
    return sum(scores) / len(scores)


def round_half_up(x, places=2):
    return float(Decimal(repr(x)).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


@dataclass
class MetricReport:
    bleu: float
    self_bleu: float
    ibleu: float
    p_bleu: float | None
    alpha: float

    def rounded(self):
        return MetricReport(
            *(None if v is None else round_half_up(v) for v in (self.bleu, self.self_bleu, self.ibleu, self.p_bleu)),
            self.alpha,
        )

    def to_json(self):
        return json.dumps(asdict(self.rounded()), sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bleu", "self_bleu", "ibleu", "p_bleu", "alpha"])
        r = self.rounded()
        writer.writerow([r.bleu, r.self_bleu, r.ibleu, "" if r.p_bleu is None else r.p_bleu, r.alpha])
        return buf.getvalue()


def metric_report(outputs, references, inputs, alpha=0.8, candidate_sets=None):
    """BLEU, Self-BLEU, iBLEU and (optionally) P-BLEU for tokenized outputs.

    ``references`` is a list of reference lists, one per output.
    """
    bleu = corpus_bleu(Corpus(list(outputs), [list(r) for r in references]))
    sb = self_bleu(outputs, inputs)
    pb = pairwise_bleu(candidate_sets) if candidate_sets is not None else None
    return MetricReport(bleu, sb, ibleu(bleu, sb, alpha), pb, alpha)


def read_segments(path, lowercase=True):
    """One tokenized segment per line of a UTF-8 file."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [tokenize(line, lowercase) for line in lines]
