"""Training and evaluation data: synthetic corpora, history samples, augmentation.

Corpus files hold one document each, one ``source<TAB>target`` sentence pair
per line.  A split directory also carries ``boundaries.tsv`` with the gold
sentence-end positions (1-based, cumulative) of every document's source
stream.
"""

from dataclasses import dataclass, field
import math
import os
import re

import numpy as np

from ._validation import check_positive_int, check_random_state
from .exceptions import ConfigurationError
from .features import BoundaryTrainingSample
from .stream import SEP, DEFAULT_HISTORY_WORDS
from .toy import ToyLexicon

# every mark is replaced by whitespace before tokenising
PUNCTUATION = '.,;:!?"()—…'
_PUNCT_RE = re.compile("[" + re.escape(PUNCTUATION) + "]")


def normalize_source(text):
    """Lowercase, blank out ``PUNCTUATION`` and split on whitespace."""
    return _PUNCT_RE.sub(" ", text.lower()).split()


@dataclass(frozen=True)
class Document:
    id: str
    sentence_pairs: tuple

    def __post_init__(self):
        pairs = tuple((tuple(s), tuple(t)) for s, t in self.sentence_pairs)
        if not pairs:
            raise ConfigurationError(f"document {self.id!r} has no sentences")
        object.__setattr__(self, "sentence_pairs", pairs)

    @property
    def source_stream(self):
        return [w for s, _ in self.sentence_pairs for w in s]

    @property
    def reference_segments(self):
        return [list(t) for _, t in self.sentence_pairs]

    @property
    def boundaries(self):
        out, total = [], 0
        for s, _ in self.sentence_pairs:
            total += len(s)
            out.append(total)
        return out


@dataclass(frozen=True)
class TrainingSample:
    """Sentence pair with streaming history, kept split into history and current."""

    source_history: tuple = ()
    source_current: tuple = ()
    target_history: tuple = ()
    target_current: tuple = ()

    @property
    def source(self):
        return list(self.source_history) + list(self.source_current)

    @property
    def target(self):
        return list(self.target_history) + list(self.target_current)

    @property
    def history_token_count(self):
        return sum(1 for w in self.source_history if w != SEP), sum(1 for w in self.target_history if w != SEP)


def build_history_samples(doc, cap=DEFAULT_HISTORY_WORDS):
    """One sample per sentence pair, prefixed by the nearest previous pairs.

    Previous sentences are added, most recent first, while both sides stay
    within ``cap`` words (SEP excluded); each is followed by SEP.
    """
    cap = check_positive_int(cap, "cap")
    samples = []
    pairs = doc.sentence_pairs
    for i, (src, tgt) in enumerate(pairs):
        chosen, n_src, n_tgt = [], 0, 0
        for j in range(i - 1, -1, -1):
            ps, pt = pairs[j]
            if n_src + len(ps) > cap or n_tgt + len(pt) > cap:
                break
            chosen.append(j)
            n_src += len(ps)
            n_tgt += len(pt)
        hs, ht = [], []
        for j in reversed(chosen):
            hs += list(pairs[j][0]) + [SEP]
            ht += list(pairs[j][1]) + [SEP]
        samples.append(TrainingSample(tuple(hs), tuple(src), tuple(ht), tuple(tgt)))
    return samples


def prefix_lengths(n_source, n_target, rng, coupling="proportional"):
    """Draw ``(source_prefix, target_prefix)`` lengths for prefix training."""
    ls = int(rng.integers(1, n_source + 1))
    if coupling == "proportional":
        lt = max(1, int(math.floor(n_target * ls / n_source + 0.5)))
    elif coupling == "independent":
        lt = int(rng.integers(1, n_target + 1))
    else:
        raise ConfigurationError(f"unknown prefix coupling {coupling!r}")
    return ls, min(lt, n_target)


def prefix_augment(sample, rng, coupling="proportional"):
    """Prefix version of ``sample``; the streaming history is left untouched."""
    if not sample.source_current or not sample.target_current:
        raise ConfigurationError("prefix augmentation needs a non-empty current sentence")
    rng = check_random_state(rng) if not hasattr(rng, "integers") else rng
    ls, lt = prefix_lengths(len(sample.source_current), len(sample.target_current), rng, coupling)
    return TrainingSample(
        sample.source_history,
        sample.source_current[:ls],
        sample.target_history,
        sample.target_current[:lt],
    )


def augment_with_prefixes(samples, rng, coupling="proportional"):
    """Originals followed by one prefix sample each (the set doubles)."""
    rng = check_random_state(rng)
    samples = list(samples)
    return samples + [prefix_augment(s, rng, coupling) for s in samples]


def strip_source_sep(sample):
    """Drop SEP tokens from the source side only."""
    return TrainingSample(
        tuple(w for w in sample.source_history if w != SEP),
        tuple(w for w in sample.source_current if w != SEP),
        sample.target_history,
        sample.target_current,
    )


# --------------------------------------------------------------------------
# Synthetic language
# --------------------------------------------------------------------------

_SRC_CONS = "bdfgklmnprstvz"
_SRC_VOW = "aeiou"
_TGT_CONS = "BCDGHJKLMNPRSTWX"
_TGT_VOW = "AEIOUY"


@dataclass(frozen=True)
class GrammarConfig:
    n_words: int = 60
    n_terminators: int = 4
    fertility_mix: dict = field(default_factory=lambda: {1: 0.5, 2: 0.5})
    min_len: int = 4
    max_len: int = 10
    filler: str = "<unk>"

    def validate(self):
        check_positive_int(self.n_words, "n_words")
        check_positive_int(self.n_terminators, "n_terminators")
        check_positive_int(self.min_len, "min_len")
        if self.max_len < self.min_len:
            raise ConfigurationError("max_len must be >= min_len")
        mix = {int(k): float(v) for k, v in self.fertility_mix.items()}
        if not mix or any(k < 0 or k > 2 for k in mix) or any(v < 0 for v in mix.values()) or sum(mix.values()) <= 0:
            raise ConfigurationError(f"fertility_mix must weight fertilities in 0..2: {self.fertility_mix}")
        return mix


def _pseudo_words(rng, n, consonants, vowels, taken):
    out = []
    while len(out) < n:
        n_syll = int(rng.integers(2, 4))
        word = "".join(consonants[rng.integers(len(consonants))] + vowels[rng.integers(len(vowels))] for _ in range(n_syll))
        if word not in taken:
            taken.add(word)
            out.append(word)
    return out


def _stratified_fertilities(rng, n, mix):
    keys = sorted(mix)
    total = sum(mix.values())
    counts = [int(math.floor(n * mix[k] / total)) for k in keys]
    # largest remainders fill the rounding gap
    rema = sorted(range(len(keys)), key=lambda i: -(n * mix[keys[i]] / total - counts[i]))
    for i in rema[: n - sum(counts)]:
        counts[i] += 1
    fert = [k for k, c in zip(keys, counts) for _ in range(c)]
    rng.shuffle(fert)
    return fert


def make_lexicon(rng, config=None):
    """Random synthetic lexicon; terminators always have fertility >= 1."""
    config = config or GrammarConfig()
    mix = config.validate()
    rng = check_random_state(rng)
    taken = set()
    words = _pseudo_words(rng, config.n_words, _SRC_CONS, _SRC_VOW, taken)
    terms = _pseudo_words(rng, config.n_terminators, _SRC_CONS, _SRC_VOW, taken)
    fert = _stratified_fertilities(rng, config.n_words, mix)
    term_mix = {k: v for k, v in mix.items() if k >= 1} or {1: 1.0}
    term_fert = _stratified_fertilities(rng, config.n_terminators, term_mix)
    n_targets = sum(fert) + sum(term_fert)
    tgt = iter(_pseudo_words(rng, n_targets, _TGT_CONS, _TGT_VOW, set()))
    entries = {}
    for w, f in zip(words + terms, fert + term_fert):
        entries[w] = tuple(next(tgt) for _ in range(f))
    return ToyLexicon(entries, frozenset(terms), config.filler)


@dataclass(frozen=True)
class SyntheticCorpus:
    documents: tuple
    lexicon: ToyLexicon
    boundaries: tuple


def generate_synthetic_corpus(seed, n_docs, sentences_per_doc, config=None, lexicon=None):
    """Deterministic parallel documents in a random synthetic language.

    When ``lexicon`` is given it is reused (so splits share one language);
    otherwise one is drawn from the same seed before the documents.
    """
    n_docs = check_positive_int(n_docs, "n_docs")
    sentences_per_doc = check_positive_int(sentences_per_doc, "sentences_per_doc")
    config = config or GrammarConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    if lexicon is None:
        lexicon = make_lexicon(rng, config)
    terms = sorted(lexicon.terminators)
    content = sorted(set(lexicon.entries) - lexicon.terminators)
    if not terms or not content:
        raise ConfigurationError("lexicon needs content words and terminators")
    docs = []
    for d in range(n_docs):
        pairs = []
        for _ in range(sentences_per_doc):
            n = int(rng.integers(config.min_len, config.max_len + 1))
            src = [content[i] for i in rng.integers(len(content), size=n)]
            src.append(terms[int(rng.integers(len(terms)))])
            pairs.append((tuple(src), tuple(lexicon.translate(src, sep_after_terminator=False))))
        docs.append(Document(f"doc{d:03d}", tuple(pairs)))
    return SyntheticCorpus(tuple(docs), lexicon, tuple(tuple(doc.boundaries) for doc in docs))


def length_ratio_median(documents):
    """Median target-to-source length ratio over all sentence pairs."""
    ratios = [len(t) / len(s) for doc in documents for s, t in doc.sentence_pairs if s]
    if not ratios:
        raise ConfigurationError("no sentence pairs to compute a length ratio")
    return float(np.median(ratios))


def sentence_pairs(documents):
    return [(list(s), list(t)) for doc in documents for s, t in doc.sentence_pairs]


def build_boundary_samples(documents, max_lookahead=0, rng=None):
    """Boundary-classification samples, one per sentence pair.

    Each chunk is the source sentence followed by up to ``max_lookahead``
    words of the next sentences (drawn uniformly), mirroring the read-ahead
    present when a segment is closed during streaming.  The label stays at
    the sentence end.
    """
    rng = check_random_state(rng)
    out = []
    for doc in documents:
        stream = doc.source_stream
        ends = doc.boundaries
        start = 0
        for (src, tgt), end in zip(doc.sentence_pairs, ends):
            extra = int(rng.integers(0, max_lookahead + 1)) if max_lookahead > 0 else 0
            chunk = stream[start : min(len(stream), end + extra)]
            out.append(BoundaryTrainingSample(tuple(chunk), tuple(tgt), len(src)))
            start = end
    return out


# --------------------------------------------------------------------------
# Files
# --------------------------------------------------------------------------


def _raw_source(words):
    text = " ".join(words)
    return text[:1].upper() + text[1:] + "."


def write_split(directory, documents, raw_source=True):
    """Write one ``<doc id>.tsv`` per document plus ``boundaries.tsv``."""
    os.makedirs(directory, exist_ok=True)
    for doc in documents:
        with open(os.path.join(directory, f"{doc.id}.tsv"), "w", encoding="utf-8") as fh:
            for s, t in doc.sentence_pairs:
                src = _raw_source(s) if raw_source else " ".join(s)
                fh.write(f"{src}\t{' '.join(t)}\n")
    with open(os.path.join(directory, "boundaries.tsv"), "w", encoding="utf-8") as fh:
        for doc in documents:
            fh.write(f"{doc.id}\t{' '.join(map(str, doc.boundaries))}\n")


def read_document(path, doc_id=None):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected source<TAB>target")
            src, tgt = line.split("\t", 1)
            pairs.append((normalize_source(src), tgt.split()))
    if doc_id is None:
        doc_id = os.path.splitext(os.path.basename(path))[0]
    return Document(doc_id, tuple(pairs))


def read_split(directory):
    """Load every document of a split directory, sorted by id."""
    if not os.path.isdir(directory):
        raise ConfigurationError(f"corpus directory {directory!r} does not exist")
    names = sorted(n for n in os.listdir(directory) if n.endswith(".tsv") and n != "boundaries.tsv")
    if not names:
        raise ConfigurationError(f"no documents in {directory!r}")
    return [read_document(os.path.join(directory, n)) for n in names]


def read_boundaries(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                doc_id, _, rest = line.rstrip("\n").partition("\t")
                out[doc_id] = [int(b) for b in rest.split()]
    return out


def write_training_samples(path, samples):
    """``source<TAB>target`` lines, SEP kept as a token."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(f"{' '.join(s.source)}\t{' '.join(s.target)}\n")
