"""Stream, active-chunk and streaming-history data model.

The source stream is tiled, left to right, by the spans held in the
streaming history, the active chunk, and the still unread suffix.  A SEP
token closes every target segment; it is a control symbol and never counts
towards the history word caps.
"""

from dataclasses import dataclass, field
import json

from .exceptions import BoundaryDomainError, ConfigurationError

SEP = "[SEP]"
DEFAULT_HISTORY_WORDS = 50


@dataclass(frozen=True)
class Token:
    surface: str
    stream_index: int

    def __post_init__(self):
        if not self.surface:
            raise ConfigurationError("token surface must be non-empty")
        if self.stream_index < 0:
            raise ConfigurationError("stream_index must be non-negative")

    @property
    def is_sep(self):
        return self.surface == SEP


def count_words(tokens):
    """Number of tokens that are not SEP delimiters."""
    return sum(1 for t in tokens if getattr(t, "surface", t) != SEP)


def surfaces(tokens):
    return [t.surface for t in tokens]


class TokenStream:
    """Append-only token stream with contiguous indices starting at 0."""

    def __init__(self, words=(), closed=False):
        self.tokens = []
        self.closed = False
        for w in words:
            self.append(w)
        self.closed = bool(closed)

    def append(self, surface):
        if self.closed:
            raise ConfigurationError("cannot append to a closed stream")
        tok = Token(surface, len(self.tokens))
        self.tokens.append(tok)
        return tok

    def close(self):
        self.closed = True

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, item):
        return self.tokens[item]

    def __iter__(self):
        return iter(self.tokens)

    def words(self):
        return surfaces(self.tokens)


@dataclass(frozen=True)
class ActiveChunk:
    source_span: tuple = ()
    target_partial: tuple = ()

    def __post_init__(self):
        if any(t.is_sep for t in self.target_partial):
            raise ConfigurationError("target_partial must not contain SEP")

    @property
    def source_start(self):
        return self.source_span[0].stream_index if self.source_span else None


@dataclass(frozen=True)
class SegmentPair:
    source_span: tuple
    target_segment: tuple

    def __post_init__(self):
        seps = [t for t in self.target_segment if t.is_sep]
        if len(seps) != 1 or not self.target_segment[-1].is_sep:
            raise ConfigurationError("target_segment must end in exactly one SEP")

    @property
    def source_words(self):
        return count_words(self.source_span)

    @property
    def target_words(self):
        return count_words(self.target_segment)


@dataclass(frozen=True)
class StreamingHistory:
    pairs: tuple = ()
    max_words: int = DEFAULT_HISTORY_WORDS

    def __post_init__(self):
        if self.max_words < 1:
            raise ConfigurationError("max_words must be positive")

    @property
    def source_words(self):
        return sum(p.source_words for p in self.pairs)

    @property
    def target_words(self):
        return sum(p.target_words for p in self.pairs)

    @property
    def next_source_index(self):
        """Stream index of the first source token not held in the history."""
        for pair in reversed(self.pairs):
            if pair.source_span:
                return pair.source_span[-1].stream_index + 1
        return None


def commit_to_history(history, chunk, a_hat, sep_index=None):
    """Move ``chunk.source_span[:a_hat]`` and the closed segment into history.

    ``a_hat`` counts positions from the start of the chunk.  Zero is accepted
    and produces a pair with an empty source span.  ``sep_index`` is the
    target-stream index given to the closing SEP; by default it follows the
    last partial target token.

    Returns the new ``(history, chunk)``; the new chunk starts right after the
    committed span and carries no target tokens.
    """
    n = len(chunk.source_span)
    if isinstance(a_hat, bool) or int(a_hat) != a_hat or not 0 <= a_hat <= n:
        raise BoundaryDomainError(f"a_hat={a_hat!r} outside [0, {n}]")
    a_hat = int(a_hat)
    if sep_index is None:
        sep_index = chunk.target_partial[-1].stream_index + 1 if chunk.target_partial else 0
    pair = SegmentPair(
        source_span=tuple(chunk.source_span[:a_hat]),
        target_segment=tuple(chunk.target_partial) + (Token(SEP, sep_index),),
    )
    new_history = StreamingHistory(history.pairs + (pair,), history.max_words)
    return new_history, ActiveChunk(tuple(chunk.source_span[a_hat:]), ())


def truncate_history(history):
    """Drop whole oldest pairs until both word totals fit ``max_words``."""
    pairs = list(history.pairs)
    src = sum(p.source_words for p in pairs)
    tgt = sum(p.target_words for p in pairs)
    while pairs and (src > history.max_words or tgt > history.max_words):
        dropped = pairs.pop(0)
        src -= dropped.source_words
        tgt -= dropped.target_words
    if len(pairs) == len(history.pairs):
        return history
    return StreamingHistory(tuple(pairs), history.max_words)


def session_snapshot(history, chunk):
    """Decoder context as ``(source surfaces, target surfaces)``.

    History target segments keep their SEP delimiters.
    """
    src = [t.surface for p in history.pairs for t in p.source_span]
    tgt = [t.surface for p in history.pairs for t in p.target_segment]
    src.extend(t.surface for t in chunk.source_span)
    tgt.extend(t.surface for t in chunk.target_partial)
    return src, tgt


def check_partition(history, chunk, n_read):
    """True when history spans, the chunk and the unread suffix tile ``[first, n_read)``."""
    indices = [t.stream_index for p in history.pairs for t in p.source_span]
    indices += [t.stream_index for t in chunk.source_span]
    if not indices:
        return True
    return indices == list(range(indices[0], indices[0] + len(indices))) and indices[-1] == n_read - 1


EVENT_TYPES = ("READ", "WRITE", "SEP", "COMMIT", "TRUNCATE")


@dataclass
class SessionTrace:
    """Ordered READ/WRITE/SEP/COMMIT/TRUNCATE events of one session."""

    events: list = field(default_factory=list)

    def add(self, type_, **payload):
        if type_ not in EVENT_TYPES:
            raise ConfigurationError(f"unknown event type {type_!r}")
        self.events.append({"type": type_, "payload": payload})

    def of_type(self, type_):
        return [e["payload"] for e in self.events if e["type"] == type_]

    @property
    def delays(self):
        """Source words read when each target word was committed."""
        return [p["delay"] for p in self.of_type("WRITE")]

    @property
    def hypothesis(self):
        """Committed target words, SEP delimiters excluded."""
        return [p["token"] for p in self.of_type("WRITE")]

    @property
    def target_stream(self):
        out = []
        for e in self.events:
            if e["type"] == "WRITE":
                out.append(e["payload"]["token"])
            elif e["type"] == "SEP":
                out.append(SEP)
        return out

    @property
    def source_length(self):
        return sum(1 for p in self.of_type("READ") if p["token"] != SEP)

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for event in self.events:
                fh.write(json.dumps(event, sort_keys=True, ensure_ascii=False) + "\n")

    @classmethod
    def from_jsonl(cls, path):
        trace = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    event = json.loads(line)
                    trace.add(event["type"], **event["payload"])
        return trace
