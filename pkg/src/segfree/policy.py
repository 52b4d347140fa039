"""Streaming sessions: wait-k scheduling, memory mechanisms and segmenters.

A session reads source words one at a time.  Between reads it writes while
the wait-k condition holds, counting only the source and target words of the
active chunk.  Every committed word records its delay, the number of source
words read at that moment.  SEP tokens are free: a SEP proposed right after
the last allowed word is committed too.
"""

from dataclasses import dataclass
import math

from ._validation import check_boundaries, check_positive_float, check_positive_int
from .exceptions import BoundaryDomainError, ConfigurationError, SegFreeError, SessionError
from .stream import (
    DEFAULT_HISTORY_WORDS,
    SEP,
    ActiveChunk,
    SessionTrace,
    StreamingHistory,
    Token,
    TokenStream,
    commit_to_history,
    count_words,
    session_snapshot,
    surfaces,
    truncate_history,
)
from .toy import speculative_beam_search

MAX_WRITES_PER_READ = 2000


@dataclass(frozen=True)
class WaitKPolicy:
    k: int

    def __post_init__(self):
        check_positive_int(self.k, "k")


@dataclass(frozen=True)
class NaiveOffsetConfig:
    r: float
    cumulative: bool = True

    def __post_init__(self):
        check_positive_float(self.r, "r")


@dataclass
class BoundaryState:
    """Running totals handed to memory mechanisms."""

    committed_target_words: int = 0
    consumed_source_words: int = 0


# --------------------------------------------------------------------------
# Memory mechanisms
# --------------------------------------------------------------------------


def naive_boundary(y_committed_total, r, already_consumed, chunk_len):
    """Fixed-offset boundary: new source positions to move into history.

    The cumulative committed target length is converted to a cumulative
    source position with the ratio ``r``; the positions already consumed are
    subtracted and the result is clamped to the chunk.
    """
    r = check_positive_float(r, "r")
    target_pos = max(math.floor(y_committed_total / r), 0)
    return int(min(max(target_pos - already_consumed, 0), chunk_len))


class NaiveMechanism:
    name = "naive"

    def __init__(self, r, cumulative=True):
        self.config = NaiveOffsetConfig(r, cumulative)

    def __call__(self, chunk_words, segment_words, state):
        if self.config.cumulative:
            return naive_boundary(state.committed_target_words, self.config.r, state.consumed_source_words, len(chunk_words))
        return naive_boundary(count_words(segment_words), self.config.r, 0, len(chunk_words))


class LogLinearMechanism:
    """Boundary chosen by a fitted :class:`~segfree.features.BoundaryModel`."""

    name = "loglinear"

    def __init__(self, model):
        self.model = model

    def __call__(self, chunk_words, segment_words, state):
        return int(self.model.select(list(chunk_words), list(segment_words)))


class OracleMechanism:
    """Consumes up to the first gold sentence end inside the chunk."""

    name = "oracle"

    def __init__(self, boundaries):
        self.boundaries = check_boundaries(boundaries)

    def __call__(self, chunk_words, segment_words, state):
        lo = state.consumed_source_words
        inside = [b for b in self.boundaries if lo < b <= lo + len(chunk_words)]
        return inside[0] - lo if inside else 0


# --------------------------------------------------------------------------
# Segmenters
# --------------------------------------------------------------------------


class OracleSegmenter:
    """Emits the reference sentence boundaries (1-based word positions)."""

    def __init__(self, boundaries):
        self.boundaries = check_boundaries(boundaries)

    def next_boundary(self, words, closed, after=0):
        n = len(words)
        for b in self.boundaries:
            if b > after:
                return b if b <= n else None
        return n if closed and n > after else None


class FixedLengthSegmenter:
    """Cuts the stream every ``length`` words."""

    def __init__(self, length):
        self.length = check_positive_int(length, "length")

    def next_boundary(self, words, closed, after=0):
        n = len(words)
        b = after + self.length
        if b <= n:
            return b
        return n if closed and n > after else None


def oracle_segmenter(source, reference_boundaries):
    length = len(source) if getattr(source, "closed", True) else None
    return OracleSegmenter(check_boundaries(reference_boundaries, length))


# --------------------------------------------------------------------------
# Sessions
# --------------------------------------------------------------------------


class _Session:
    def __init__(self, decoder, k, history_cap=DEFAULT_HISTORY_WORDS, beam=4, max_new=None):
        self.decoder = decoder
        self.k = WaitKPolicy(k).k if not isinstance(k, WaitKPolicy) else k.k
        self.beam = check_positive_int(beam, "beam")
        self.max_new = check_positive_int(max_new if max_new is not None else 2 * self.k, "max_new")
        self.history = StreamingHistory((), check_positive_int(history_cap, "history_cap"))
        self.chunk = ActiveChunk()
        self.trace = SessionTrace()
        self.state = BoundaryState()
        self.n_read = 0
        self.n_source_tokens = 0
        self.target_index = 0
        self.closed = False
        self.runaway = False

    # shared helpers --------------------------------------------------------

    def _read(self, surface):
        tok = Token(surface, self.n_source_tokens)
        self.n_source_tokens += 1
        if surface != SEP:
            self.n_read += 1
        self.chunk = ActiveChunk(self.chunk.source_span + (tok,), self.chunk.target_partial)
        self.trace.add("READ", token=surface, read=self.n_read)

    def _write_word(self, surface, lag):
        tok = Token(surface, self.target_index)
        self.target_index += 1
        self.chunk = ActiveChunk(self.chunk.source_span, self.chunk.target_partial + (tok,))
        self.state.committed_target_words += 1
        self.trace.add("WRITE", token=surface, delay=self.n_read, lag=lag, exhausted=self.closed)

    def _commit(self, a_hat):
        chunk_words = count_words(self.chunk.source_span)
        start = self.state.consumed_source_words
        self.trace.add("SEP", read=self.n_read)
        span = self.chunk.source_span[:a_hat]
        self.history, self.chunk = commit_to_history(self.history, self.chunk, a_hat, sep_index=self.target_index)
        self.target_index += 1
        consumed = count_words(span)
        self.state.consumed_source_words += consumed
        self.trace.add(
            "COMMIT",
            a_hat=a_hat,
            start=start,
            end=start + consumed,
            chunk_len=chunk_words,
            segment_len=self.history.pairs[-1].target_words,
            read=self.n_read,
        )
        before = len(self.history.pairs)
        self.history = truncate_history(self.history)
        self.trace.add(
            "TRUNCATE",
            dropped=before - len(self.history.pairs),
            source_words=self.history.source_words,
            target_words=self.history.target_words,
        )

    def _propose(self):
        src, tgt = session_snapshot(self.history, self.chunk)
        return speculative_beam_search(self.decoder, src, tgt, self.beam, self.max_new).new_tokens

    def _flush_cap(self):
        src, _ = session_snapshot(self.history, self.chunk)
        return 3 * max(1, count_words(src))

    def push(self, word):
        if self.closed:
            raise ConfigurationError("session already closed")
        self._on_read(word)
        self._write_loop()

    def close(self):
        if not self.closed:
            self.closed = True
            self._on_close()
            self._write_loop()
        return self.trace

    def feed(self, words):
        for w in words:
            self.push(w)
        return self


class SegFreeSession(_Session):
    """Segmentation-free session driven by a memory mechanism."""

    def __init__(self, decoder, k, mechanism, history_cap=DEFAULT_HISTORY_WORDS, beam=4, max_new=None):
        super().__init__(decoder, k, history_cap, beam, max_new)
        self.mechanism = mechanism

    def _on_read(self, word):
        if word == SEP:
            raise ConfigurationError("segmentation-free sources must not contain SEP")
        self._read(word)

    def _on_close(self):
        self._flush_left = self._flush_cap()

    def _choose(self):
        chunk_words = surfaces(self.chunk.source_span)
        if not chunk_words:
            return 0
        a_hat = self.mechanism(chunk_words, surfaces(self.chunk.target_partial), self.state)
        if isinstance(a_hat, bool) or int(a_hat) != a_hat or not 0 <= a_hat <= len(chunk_words):
            raise BoundaryDomainError(f"mechanism returned {a_hat!r} for a chunk of {len(chunk_words)}")
        return int(a_hat)

    def _write_loop(self):
        writes = 0
        while True:
            src_c = count_words(self.chunk.source_span)
            tgt_c = count_words(self.chunk.target_partial)
            lag = src_c - tgt_c
            if not self.closed and lag < self.k:
                return
            if self.closed and self._flush_left <= 0:
                self.runaway = True
                return
            allowance = math.inf if self.closed else lag - self.k + 1
            progressed = False
            for tok in self._propose():
                if tok == SEP:
                    if self.chunk.target_partial:
                        self._commit(self._choose())
                        progressed = True
                    break
                if allowance <= 0:
                    break
                self._write_word(tok, lag)
                lag -= 1
                allowance -= 1
                progressed = True
                writes += 1
                if self.closed:
                    self._flush_left -= 1
                    if self._flush_left <= 0:
                        break
            if not progressed:
                return
            if writes > MAX_WRITES_PER_READ:
                raise SessionError("too many writes without reading", self.trace)


class SegmentedSession(_Session):
    """Segmented baseline: a segmenter inserts SEP into the source stream."""

    def __init__(self, decoder, k, segmenter, history_cap=DEFAULT_HISTORY_WORDS, beam=4, max_new=None):
        super().__init__(decoder, k, history_cap, beam, max_new)
        self.segmenter = segmenter
        self.words = []
        self.last_boundary = 0

    def _on_read(self, word):
        if word == SEP:
            raise ConfigurationError("segmented sources receive SEP from the segmenter only")
        self.words.append(word)
        self._read(word)
        self._segment()

    def _on_close(self):
        self._segment()
        self._flush_left = self._flush_cap()

    def _segment(self):
        while True:
            b = self.segmenter.next_boundary(self.words, self.closed, self.last_boundary)
            if b is None:
                return
            if not self.last_boundary < b <= len(self.words):
                raise ConfigurationError(f"segmenter boundary {b} out of order")
            self._insert_sep(b)
            self.last_boundary = b

    def _insert_sep(self, b):
        # words after b that were already read shift by one source position
        span = list(self.chunk.source_span)
        words_seen = self.state.consumed_source_words
        pos = len(span)
        for i, tok in enumerate(span):
            if tok.surface != SEP:
                words_seen += 1
                if words_seen == b:
                    pos = i + 1
                    break
        if pos == len(span):
            self._read(SEP)
            return
        first = span[0].stream_index
        span.insert(pos, Token(SEP, 0))
        span = [Token(t.surface, first + i) for i, t in enumerate(span)]
        self.n_source_tokens += 1
        self.chunk = ActiveChunk(tuple(span), self.chunk.target_partial)
        self.trace.add("READ", token=SEP, read=self.n_read)

    def _first_sep(self):
        for i, tok in enumerate(self.chunk.source_span):
            if tok.surface == SEP:
                return i
        return None

    def _write_loop(self):
        writes = 0
        while True:
            sep_at = self._first_sep()
            complete = sep_at is not None
            span = self.chunk.source_span if sep_at is None else self.chunk.source_span[:sep_at]
            src_c = count_words(span)
            tgt_c = count_words(self.chunk.target_partial)
            lag = src_c - tgt_c
            free = complete or self.closed
            if not free and lag < self.k:
                return
            if self.closed and self._flush_left <= 0:
                self.runaway = True
                return
            allowance = math.inf if free else lag - self.k + 1
            progressed = False
            for tok in self._propose():
                if tok == SEP:
                    if self.chunk.target_partial or complete:
                        self._commit(sep_at + 1 if complete else len(self.chunk.source_span))
                        progressed = True
                    break
                if allowance <= 0:
                    break
                self._write_word(tok, lag)
                lag -= 1
                allowance -= 1
                progressed = True
                writes += 1
                if self.closed:
                    self._flush_left -= 1
                    if self._flush_left <= 0:
                        break
            if not progressed:
                return
            if writes > MAX_WRITES_PER_READ:
                raise SessionError("too many writes without reading", self.trace)


def _words_of(source):
    if isinstance(source, TokenStream):
        return source.words(), source.closed
    if isinstance(source, str):
        return source.split(), True
    return [getattr(t, "surface", t) for t in source], True


def _drive(session, source):
    words, closed = _words_of(source)
    if not words:
        raise ConfigurationError("source stream is empty")
    try:
        session.feed(words)
        if closed:
            session.close()
    except SessionError:
        raise
    except SegFreeError as exc:
        raise SessionError(f"session aborted: {exc}", session.trace) from exc
    except (ValueError, KeyError, IndexError, RuntimeError) as exc:
        raise SessionError(f"session aborted: {exc}", session.trace) from exc
    return session.trace


def run_segfree_session(source, decoder, policy, mechanism, history_cap=DEFAULT_HISTORY_WORDS, beam=4, max_new=None):
    """Translate ``source`` without segmentation; returns the session trace."""
    return _drive(SegFreeSession(decoder, policy, mechanism, history_cap, beam, max_new), source)


def run_segmented_session(source, segmenter, decoder, policy, history_cap=DEFAULT_HISTORY_WORDS, beam=4, max_new=None):
    """Translate ``source`` chunk by chunk as delimited by ``segmenter``."""
    return _drive(SegmentedSession(decoder, policy, segmenter, history_cap, beam, max_new), source)
