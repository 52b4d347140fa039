"""Incremental decoder interface and a deterministic toy lexical translator.

The toy decoder translates monotonically word by word.  It is stateless: on
every call it works out how much of the visible source the target context
already covers by aligning the target content (SEP and filler removed) with
the lexical expansion of the source context.  The alignment must be
anchored: either the whole target content is found inside the expansion, or
the expansion's beginning matches the end of the target content (the part of
the source that produced the older target words has been truncated away).
"""

from dataclasses import dataclass
import heapq
import math
from typing import Protocol

from ._validation import check_positive_int
from .exceptions import ConfigurationError, DecoderStateError
from .stream import SEP


class IncrementalDecoder(Protocol):
    def next_distribution(self, source_context, target_context) -> dict:
        """Probability of every next target token (SEP included)."""


@dataclass(frozen=True)
class ToyLexicon:
    """Source word -> target words, plus the words that close a sentence.

    ``filler`` is the token emitted when the decoder is asked to continue a
    segment whose visible source is fully translated.  Without a filler the
    decoder closes the segment instead.
    """

    entries: dict
    terminators: frozenset = frozenset()
    filler: str = None

    def __post_init__(self):
        entries = {str(k): tuple(v) for k, v in dict(self.entries).items()}
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "terminators", frozenset(self.terminators))
        missing = self.terminators - set(entries)
        if missing:
            raise ConfigurationError(f"terminators without lexicon entry: {sorted(missing)}")
        for src, tgt in entries.items():
            if SEP in tgt or (self.filler is not None and self.filler in tgt):
                raise ConfigurationError(f"entry {src!r} uses a reserved target token")

    @property
    def target_words(self):
        return sorted({w for tgt in self.entries.values() for w in tgt})

    @property
    def vocabulary(self):
        vocab = self.target_words + [SEP]
        if self.filler is not None:
            vocab.append(self.filler)
        return vocab

    def translate(self, words, sep_after_terminator=True):
        """Full monotone translation of a closed source sequence."""
        out = []
        for w in words:
            out.extend(self.entries[w])
            if sep_after_terminator and w in self.terminators:
                out.append(SEP)
        return out

    def fertility(self, word):
        return len(self.entries[word])


def save_lexicon(lexicon, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#terminators\t" + " ".join(sorted(lexicon.terminators)) + "\n")
        if lexicon.filler is not None:
            fh.write(f"#filler\t{lexicon.filler}\n")
        for src in sorted(lexicon.entries):
            fh.write(f"{src}\t{' '.join(lexicon.entries[src])}\n")


def load_lexicon(path):
    """Read a lexicon file: ``source<TAB>target words`` per line.

    ``#terminators`` and ``#filler`` directive lines carry the sentence-final
    word set and the optional filler token.
    """
    entries, terminators, filler = {}, set(), None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            head, _, rest = line.partition("\t")
            if head == "#terminators":
                terminators.update(rest.split())
            elif head == "#filler":
                filler = rest.strip() or None
            elif head.startswith("#"):
                continue
            else:
                if not head or " " in head:
                    raise ConfigurationError(f"{path}:{lineno}: bad source word {head!r}")
                entries[head] = tuple(rest.split())
    return ToyLexicon(entries, frozenset(terminators), filler)


def _z_function(seq):
    n = len(seq)
    z = [0] * n
    if n:
        z[0] = n
    left = right = 0
    for i in range(1, n):
        if i < right:
            z[i] = min(right - i, z[i - left])
        while i + z[i] < n and seq[z[i]] == seq[i + z[i]]:
            z[i] += 1
        if i + z[i] > right:
            left, right = i, i + z[i]
    return z


class ToyDecoder:
    """Deterministic lexical decoder implementing ``next_distribution``.

    Parameters
    ----------
    lexicon : ToyLexicon
    noise : float
        Probability mass spread uniformly over the non-chosen vocabulary.
    sep_mode : {"terminator", "source"}
        ``"terminator"`` closes a segment after each terminator word (the
        segmentation-free model); ``"source"`` closes it where the source
        context carries a SEP token (the segmented model).
    strict : bool
        Raise :class:`DecoderStateError` when a non-empty target context
        shares no anchored overlap with the source context.
    """

    def __init__(self, lexicon, noise=0.0, sep_mode="terminator", strict=False, cache_size=50000):
        if sep_mode not in ("terminator", "source"):
            raise ConfigurationError(f"unknown sep_mode {sep_mode!r}")
        if not 0.0 <= noise < 1.0:
            raise ConfigurationError("noise must lie in [0, 1)")
        self.lexicon = lexicon
        self.noise = float(noise)
        self.sep_mode = sep_mode
        self.strict = strict
        self.vocabulary = tuple(lexicon.vocabulary)
        self._vocab_set = frozenset(self.vocabulary)
        self._skip = {SEP} if lexicon.filler is None else {SEP, lexicon.filler}
        self._cache_size = cache_size
        self._expansions = {}
        self._coverage = {}

    # source side -----------------------------------------------------------

    def _expand(self, source):
        hit = self._expansions.get(source)
        if hit is not None:
            return hit
        content, sep_after = [], set()
        for w in source:
            if w == SEP:
                if self.sep_mode == "source":
                    sep_after.add(len(content))
                continue
            tgt = self.lexicon.entries.get(w)
            if tgt is None:
                if self.strict:
                    raise DecoderStateError(f"source word {w!r} not in lexicon")
                continue
            content.extend(tgt)
            if self.sep_mode == "terminator" and w in self.lexicon.terminators:
                sep_after.add(len(content))
        hit = (tuple(content), frozenset(sep_after))
        if len(self._expansions) >= self._cache_size:
            self._expansions.clear()
        self._expansions[source] = hit
        return hit

    # coverage --------------------------------------------------------------

    def _align(self, expansion, tcontent):
        if not tcontent:
            return 0, True
        n_t = len(tcontent)
        z = _z_function(tcontent[::-1] + (None,) + expansion[::-1])
        best_c, best_len = 0, 0
        for c in range(1, len(expansion) + 1):
            length = z[n_t + 1 + len(expansion) - c]
            if length > best_len and (length == n_t or length == c):
                best_c, best_len = c, length
        return best_c, best_len == n_t

    def coverage(self, source, target):
        """Number of expansion tokens already covered by ``target``."""
        source = tuple(source)
        expansion, _ = self._expand(source)
        tcontent = tuple(w for w in target if w not in self._skip)
        return self._coverage_of(source, expansion, tcontent)[0]

    def _coverage_of(self, source, expansion, tcontent):
        key = (source, tcontent)
        hit = self._coverage.get(key)
        if hit is not None:
            return hit
        result = None
        if tcontent:
            prev = self._coverage.get((source, tcontent[:-1]))
            # a full match extended by the expected token stays the earliest full match
            if prev is not None and prev[1] and prev[0] < len(expansion) and expansion[prev[0]] == tcontent[-1]:
                result = (prev[0] + 1, True)
        if result is None:
            result = self._align(expansion, tcontent)
            if self.strict and tcontent and result[0] == 0:
                raise DecoderStateError("target context cannot be derived from the source context")
        if len(self._coverage) >= self._cache_size:
            self._coverage.clear()
        self._coverage[key] = result
        return result

    # prediction --------------------------------------------------------------

    def next_token(self, source_context, target_context):
        source = tuple(source_context)
        target = tuple(target_context)
        for w in target:
            if w not in self._vocab_set:
                raise DecoderStateError(f"target token {w!r} outside the decoder vocabulary")
        expansion, sep_after = self._expand(source)
        tcontent = tuple(w for w in target if w not in self._skip)
        c, _ = self._coverage_of(source, expansion, tcontent)
        last = target[-1] if target else None
        if last is not None and last not in self._skip and c in sep_after:
            return SEP
        if c < len(expansion):
            return expansion[c]
        if last is None or last == SEP or self.lexicon.filler is None:
            return SEP
        return self.lexicon.filler

    def next_distribution(self, source_context, target_context):
        best = self.next_token(source_context, target_context)
        if self.noise == 0.0:
            dist = {best: 1.0}
            dist.setdefault(SEP, 0.0)
            return dist
        rest = self.noise / (len(self.vocabulary) - 1)
        dist = dict.fromkeys(self.vocabulary, rest)
        dist[best] = 1.0 - self.noise
        return dist


def toy_next_distribution(lexicon, source_context, target_context, noise=0.0, sep_mode="terminator"):
    """One-shot strict evaluation of the toy decoder."""
    decoder = ToyDecoder(lexicon, noise=noise, sep_mode=sep_mode, strict=True)
    return decoder.next_distribution(list(source_context), list(target_context))


# --------------------------------------------------------------------------
# Speculative beam search
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple
    log_score: float
    prefix_len: int = 0

    @property
    def new_tokens(self):
        return self.tokens[self.prefix_len :]

    @property
    def complete(self):
        return len(self.tokens) > self.prefix_len and self.tokens[-1] == SEP

    def rank_key(self):
        # complete hypotheses beat partial ones
        return (self.complete, self.log_score)


def _expansions(decoder, source, hyp, width):
    dist = decoder.next_distribution(source, list(hyp.tokens))
    ranked = heapq.nsmallest(width, ((-p, tok) for tok, p in dist.items() if p > 0.0))
    return [Hypothesis(hyp.tokens + (tok,), hyp.log_score + math.log(-negp), hyp.prefix_len) for negp, tok in ranked]


def greedy_search(decoder, source_context, committed_prefix, max_new):
    hyp = Hypothesis(tuple(committed_prefix), 0.0, len(committed_prefix))
    for _ in range(max_new):
        nxt = _expansions(decoder, source_context, hyp, 1)
        if not nxt:
            break
        hyp = nxt[0]
        if hyp.complete:
            break
    return hyp


def speculative_beam_search(decoder, source_context, committed_prefix, beam=4, max_new=8):
    """Beam search continuing ``committed_prefix`` by up to ``max_new`` tokens.

    Hypotheses stop at SEP.  Scores are summed log-probabilities.  The
    greedy rollout is always among the finalists, so the result never ranks
    below greedy decoding.
    """
    beam = check_positive_int(beam, "beam")
    max_new = check_positive_int(max_new, "max_new")
    source = list(source_context)
    start = Hypothesis(tuple(committed_prefix), 0.0, len(committed_prefix))
    live, finished = [start], []
    for _ in range(max_new):
        candidates = []
        for hyp in live:
            candidates.extend(_expansions(decoder, source, hyp, beam))
        candidates.sort(key=lambda h: h.log_score, reverse=True)
        live = []
        for hyp in candidates[:beam]:
            (finished if hyp.complete else live).append(hyp)
        if not live:
            break
        if finished and max(h.log_score for h in finished) >= live[0].log_score:
            break
    pool = finished + live
    if beam > 1:
        pool.append(greedy_search(decoder, source, committed_prefix, max_new))
    if not pool:
        return start
    return max(pool, key=Hypothesis.rank_key)
