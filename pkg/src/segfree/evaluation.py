"""Re-alignment, BLEU, Average Lagging, bootstrap significance and curves.

SEP tokens are control symbols: they are removed before scoring and never
count towards BLEU or latency token totals.
"""

from collections import Counter
import csv
from dataclasses import dataclass, field
import math

import numpy as np

from .exceptions import ConfigurationError, InsufficientDataError, TraceMismatchError
from .stream import SEP

MAX_ORDER = 4
EPSILON = 1e-9


def _content(tokens):
    if isinstance(tokens, str):
        tokens = tokens.split()
    return [t for t in tokens if t != SEP]


# --------------------------------------------------------------------------
# Re-alignment
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AlignedHypothesis:
    segments: tuple
    total_edit_distance: int
    cuts: tuple = ()


def realign(hyp, refs):
    """Split ``hyp`` into ``len(refs)`` consecutive spans of minimum total edit distance.

    Word-level Levenshtein distance with unit costs.  Each reference row of the
    dynamic program starts from the previous segment's final row, so a new
    segment may begin at any hypothesis position.  Costs and start positions
    are packed into one integer so that ties resolve to the earliest start.
    """
    hyp = _content(hyp)
    refs = [_content(r) for r in refs]
    if not refs:
        raise ConfigurationError("realign needs at least one reference segment")
    n = len(hyp)
    base = n + 1
    cols = np.arange(n + 1, dtype=np.int64)
    shift = cols * base
    vocab = {}
    hyp_codes = np.array([vocab.setdefault(w, len(vocab)) for w in hyp], dtype=np.int64)
    inf = np.int64((1 << 61) // base)

    cost = np.full(n + 1, inf, dtype=np.int64)
    cost[0] = 0
    finals = []
    for ref in refs:
        # packed cell value: cost * base + start column of the current segment
        prev = np.minimum.accumulate(cost * base + cols - shift) + shift
        for word in ref:
            code = vocab.get(word, -1)
            cur = np.empty_like(prev)
            cur[0] = prev[0] + base
            cur[1:] = np.minimum(prev[:-1] + np.where(hyp_codes == code, 0, base), prev[1:] + base)
            prev = np.minimum.accumulate(cur - shift) + shift
        finals.append(prev)
        cost = prev // base
    total = int(cost[n])

    starts = []
    end = n
    for final in reversed(finals):
        end = int(final[end] % base)
        starts.append(end)
    bounds = starts[::-1] + [n]
    segments = tuple(tuple(hyp[bounds[i] : bounds[i + 1]]) for i in range(len(refs)))
    return AlignedHypothesis(segments, total, tuple(bounds[1:-1]))


# --------------------------------------------------------------------------
# BLEU
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QualityReport:
    bleu: float
    ngram_precisions: tuple
    brevity_penalty: float
    hyp_length: int
    ref_length: int


def _ngrams(tokens, order):
    return Counter(tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1))


def segment_statistics(hyp_segments, ref_segments):
    """Per-segment sufficient statistics, shape ``(n_segments, 3 * MAX_ORDER + 2)``.

    Columns: clipped matches, hypothesis n-gram totals and reference n-gram
    totals for each order, then hypothesis and reference lengths.
    """
    if len(hyp_segments) != len(ref_segments):
        raise TraceMismatchError(f"{len(hyp_segments)} hypothesis segments for {len(ref_segments)} references")
    stats = np.zeros((len(ref_segments), 3 * MAX_ORDER + 2), dtype=np.int64)
    for i, (hyp, ref) in enumerate(zip(hyp_segments, ref_segments)):
        hyp, ref = _content(hyp), _content(ref)
        for n in range(1, MAX_ORDER + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            stats[i, n - 1] = sum(min(c, r[g]) for g, c in h.items())
            stats[i, MAX_ORDER + n - 1] = max(len(hyp) - n + 1, 0)
            stats[i, 2 * MAX_ORDER + n - 1] = max(len(ref) - n + 1, 0)
        stats[i, -2] = len(hyp)
        stats[i, -1] = len(ref)
    return stats


def _bleu_from_totals(totals):
    """Vectorized BLEU over rows of summed statistics; returns (bleu, precisions, bp)."""
    totals = np.atleast_2d(np.asarray(totals, dtype=float))
    matches = totals[:, :MAX_ORDER]
    hyp_counts = totals[:, MAX_ORDER : 2 * MAX_ORDER]
    ref_counts = totals[:, 2 * MAX_ORDER : 3 * MAX_ORDER]
    hyp_len, ref_len = totals[:, -2], totals[:, -1]
    # an order with no n-grams on either side carries no evidence
    vacuous = (hyp_counts == 0) & (ref_counts == 0)
    prec = np.where(matches > 0, matches, EPSILON) / np.maximum(hyp_counts, 1)
    prec = np.where(vacuous, 1.0, prec)
    with np.errstate(divide="ignore"):
        bp = np.where(hyp_len < ref_len, np.exp(1.0 - ref_len / np.maximum(hyp_len, 1)), 1.0)
    bleu = 100.0 * bp * np.exp(np.log(prec).mean(axis=1))
    return bleu, prec, bp


def bleu(hyp_segments, ref_segments):
    """Corpus BLEU-4 with clipped n-gram precisions.

    Zero match counts are replaced by 1e-9 so the geometric mean stays
    defined.  Brevity penalty is ``exp(1 - R/H)`` when ``H < R``; an empty
    hypothesis uses ``H = 1``.
    """
    stats = segment_statistics(hyp_segments, ref_segments)
    if stats[:, -1].sum() == 0:
        raise ConfigurationError("empty reference corpus")
    score, prec, bp = _bleu_from_totals(stats.sum(axis=0))
    return QualityReport(
        float(score[0]),
        tuple(float(p) for p in prec[0]),
        float(bp[0]),
        int(stats[:, -2].sum()),
        int(stats[:, -1].sum()),
    )


# --------------------------------------------------------------------------
# Latency
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyReport:
    per_video_AL: tuple
    mean_AL: float


def lagging_from_delays(delays, source_length, target_length=None):
    """Average Lagging of one stream from its per-token delays."""
    delays = np.asarray(delays, dtype=float)
    if delays.size == 0:
        raise InsufficientDataError("no target tokens to measure")
    if source_length < 1:
        raise InsufficientDataError("empty source stream")
    if np.any(np.diff(delays) < 0) or delays.max() > source_length:
        raise TraceMismatchError("delays must be non-decreasing and bounded by the source length")
    target_length = delays.size if target_length is None else target_length
    ratio = target_length / source_length
    full = np.flatnonzero(delays >= source_length)
    tau = int(full[0]) + 1 if full.size else delays.size
    i = np.arange(tau)
    return float(np.mean(delays[:tau] - i / ratio))


def average_lagging(trace, aligned=None):
    """Stream-level Average Lagging of one video.

    Delays come from the trace and are indexed by hypothesis tokens.  When
    ``aligned`` is given its token count must match the trace.
    """
    delays = trace.delays
    if aligned is not None:
        n_aligned = sum(len(s) for s in aligned.segments)
        if len(delays) < n_aligned:
            raise TraceMismatchError(f"trace has {len(delays)} delays for {n_aligned} hypothesis tokens")
        if len(delays) != n_aligned:
            raise TraceMismatchError("aligned hypothesis does not match the trace")
    return lagging_from_delays(delays, trace.source_length)


def latency_report(per_video):
    per_video = tuple(float(x) for x in per_video)
    if not per_video:
        raise InsufficientDataError("no videos")
    return LatencyReport(per_video, float(np.mean(per_video)))


# --------------------------------------------------------------------------
# Boundary accuracy
# --------------------------------------------------------------------------


def boundary_accuracy(trace, gold_boundaries):
    """Fraction of commits whose consumed position is a gold sentence end."""
    gold = set(int(b) for b in gold_boundaries)
    commits = trace.of_type("COMMIT")
    if not commits:
        return 0.0
    return sum(1 for c in commits if c["end"] in gold) / len(commits)


# --------------------------------------------------------------------------
# Significance
# --------------------------------------------------------------------------


def bootstrap_indices(n_segments, resamples=1000, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, n_segments, size=(resamples, n_segments))


def bootstrap_significance(hyp_a, hyp_b, refs, resamples=1000, seed=0, indices=None):
    """Paired bootstrap p-value for the BLEU difference of systems A and B.

    ``p`` is the fraction of resamples whose delta does not keep the sign of
    the full-corpus delta.  Identical systems give ``p = 1``.
    """
    if len(refs) < 2:
        raise InsufficientDataError("bootstrap needs at least two segments")
    stats_a = segment_statistics(hyp_a, refs)
    stats_b = segment_statistics(hyp_b, refs)
    full = _bleu_from_totals(stats_a.sum(0))[0][0] - _bleu_from_totals(stats_b.sum(0))[0][0]
    if full == 0.0:
        return 1.0
    if indices is None:
        indices = bootstrap_indices(len(refs), resamples, seed)
    indices = np.asarray(indices)
    sums_a = stats_a[indices].sum(axis=1)
    sums_b = stats_b[indices].sum(axis=1)
    delta = _bleu_from_totals(sums_a)[0] - _bleu_from_totals(sums_b)[0]
    return float(np.mean(delta * math.copysign(1.0, full) <= 0.0))


# --------------------------------------------------------------------------
# Reports and curves
# --------------------------------------------------------------------------


@dataclass
class SystemResult:
    system: str
    k: int
    bleu: float
    mean_AL: float
    per_video_AL: list = field(default_factory=list)
    per_video_accuracy: list = field(default_factory=list)
    hyp_segments: list = field(default_factory=list)
    ref_segments: list = field(default_factory=list)

    @property
    def boundary_accuracy(self):
        return float(np.mean(self.per_video_accuracy)) if self.per_video_accuracy else float("nan")

    def summary(self):
        return {
            "system": self.system,
            "k": self.k,
            "BLEU": self.bleu,
            "AL": self.mean_AL,
            "per_video_AL": list(self.per_video_AL),
            "boundary_accuracy": self.boundary_accuracy,
        }


def evaluate_system(system, k, traces, references, boundaries=None):
    """Score one (system, k) over all videos.

    ``traces`` and ``references`` are parallel per-video lists; each entry of
    ``references`` is that video's list of reference segments.
    """
    if len(traces) != len(references):
        raise TraceMismatchError("one trace per video is required")
    hyp_segments, ref_segments, per_video_al, accuracy = [], [], [], []
    for v, (trace, refs) in enumerate(zip(traces, references)):
        aligned = realign(trace.hypothesis, refs)
        hyp_segments.extend(aligned.segments)
        ref_segments.extend(_content(r) for r in refs)
        per_video_al.append(average_lagging(trace, aligned))
        if boundaries is not None:
            accuracy.append(boundary_accuracy(trace, boundaries[v]))
    quality = bleu(hyp_segments, ref_segments)
    latency = latency_report(per_video_al)
    return SystemResult(system, k, quality.bleu, latency.mean_AL, list(latency.per_video_AL), accuracy, hyp_segments, ref_segments)


CURVE_HEADER = ("system", "k", "AL", "BLEU")


def emit_curve(results, path, system="system"):
    """Write ``system,k,AL,BLEU`` rows sorted by AL.

    Items may be :class:`SystemResult` objects, dicts with the header keys,
    ``(k, BLEU, AL)`` tuples labelled ``system``, or ``(system, k, BLEU, AL)``.
    """
    rows = []
    for item in results:
        if isinstance(item, SystemResult):
            rows.append((item.system, item.k, item.mean_AL, item.bleu))
        elif isinstance(item, dict):
            rows.append((item["system"], item["k"], item["AL"], item["BLEU"]))
        else:
            item = tuple(item)
            label, (k, score, al) = (system, item) if len(item) == 3 else (item[0], item[1:])
            rows.append((label, k, al, score))
    rows.sort(key=lambda r: (r[2], r[0], r[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for system, k, al, score in rows:
            writer.writerow((system, k, repr(float(al)), repr(float(score))))
    return path


def read_curve(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {"system": r["system"], "k": int(r["k"]), "AL": float(r["AL"]), "BLEU": float(r["BLEU"])}
            for r in csv.DictReader(fh)
        ]
