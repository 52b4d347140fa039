"""Experiment pipeline shared by the command line and the acceptance suite.

Stages: synthetic data, model training, simulation sweep, evaluation.  Every
stage draws its randomness from its own child of the config seed, so a stage
can be re-run alone and reproduce the same output.
"""

from dataclasses import asdict, dataclass, field, fields
import json
import os

import numpy as np

from .corpus import (
    GrammarConfig,
    build_boundary_samples,
    generate_synthetic_corpus,
    length_ratio_median,
    read_boundaries,
    read_split,
    sentence_pairs,
    write_split,
)
from .evaluation import bootstrap_significance, emit_curve, evaluate_system
from .exceptions import ConfigurationError, SegFreeError, SessionError
from .features import (
    BoundaryModel,
    LinRegFeature,
    ReverseMTFeature,
    fit_linreg,
    load_model,
    save_model,
    train_reverse_model,
    FeatureWeights,
)
from .policy import (
    FixedLengthSegmenter,
    LogLinearMechanism,
    NaiveMechanism,
    OracleMechanism,
    OracleSegmenter,
    run_segfree_session,
    run_segmented_session,
)
from .stream import SessionTrace
from .toy import ToyDecoder, load_lexicon, save_lexicon

MODES = ("segfree", "naive", "segmented-oracle", "segmented-fixed", "segfree-oracle")
FEATURES = ("reverse_mt", "linreg")
SPLITS = ("train", "dev", "test")
STAGES = ("data", "train", "simulate")


@dataclass
class ExperimentConfig:
    seed: int = 1
    n_train_docs: int = 100
    n_dev_docs: int = 20
    n_test_docs: int = 20
    sentences_per_doc: int = 10
    grammar: dict = field(default_factory=dict)
    em_iterations: int = 10
    features: list = field(default_factory=lambda: list(FEATURES))
    length_normalize: bool = True
    alignment: str = "sum"
    max_lookahead: int = 0
    learning_rate: float = 0.1
    epochs: int = 200
    init_weight: float = 1.0
    standardize: bool = True
    k_min: int = 1
    k_max: int = 10
    modes: list = field(default_factory=lambda: ["segfree", "naive", "segmented-oracle"])
    history_cap: int = 50
    beam: int = 4
    max_new: int = None
    noise: float = 0.0
    naive_cumulative: bool = True
    fixed_length: int = 5
    significance_pairs: list = field(default_factory=lambda: [["segfree", "naive"]])
    resamples: int = 1000
    output_dir: str = "runs"

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data).validate()

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)

    def grammar_config(self):
        data = dict(self.grammar)
        if "fertility_mix" in data:
            data["fertility_mix"] = {int(k): float(v) for k, v in data["fertility_mix"].items()}
        return GrammarConfig(**data)

    def ks(self):
        return list(range(self.k_min, self.k_max + 1))

    def validate(self):
        for name in ("n_train_docs", "n_dev_docs", "n_test_docs", "sentences_per_doc", "history_cap", "beam", "fixed_length", "resamples"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.k_min, int) or self.k_min < 1 or self.k_max < self.k_min:
            raise ConfigurationError(f"invalid k range [{self.k_min}, {self.k_max}]")
        if self.epochs < 0 or self.em_iterations < 0 or self.max_lookahead < 0:
            raise ConfigurationError("epochs, em_iterations and max_lookahead must be non-negative")
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise ConfigurationError(f"unknown modes {bad}; choose from {MODES}")
        bad = [f for f in self.features if f not in FEATURES]
        if bad or not self.features:
            raise ConfigurationError(f"unknown features {bad}; choose from {FEATURES}")
        for pair in self.significance_pairs:
            if len(pair) != 2:
                raise ConfigurationError(f"significance pair {pair!r} must name two systems")
        self.grammar_config().validate()
        return self

    def stage_seeds(self):
        """One independent seed sequence per pipeline stage."""
        return dict(zip(STAGES, np.random.SeedSequence(self.seed).spawn(len(STAGES))))


# --------------------------------------------------------------------------
# Data
# --------------------------------------------------------------------------


@dataclass
class DataBundle:
    splits: dict
    lexicon: object


def make_data(config):
    grammar = config.grammar_config()
    split_seeds = config.stage_seeds()["data"].spawn(len(SPLITS))
    sizes = {"train": config.n_train_docs, "dev": config.n_dev_docs, "test": config.n_test_docs}
    splits, lexicon = {}, None
    for name, ss in zip(SPLITS, split_seeds):
        corpus = generate_synthetic_corpus(ss, sizes[name], config.sentences_per_doc, grammar, lexicon=lexicon)
        lexicon = corpus.lexicon
        splits[name] = list(corpus.documents)
    return DataBundle(splits, lexicon)


def write_data(data, directory):
    for name, docs in data.splits.items():
        write_split(os.path.join(directory, name), docs)
    save_lexicon(data.lexicon, os.path.join(directory, "lexicon.tsv"))


def read_data(directory):
    lex_path = os.path.join(directory, "lexicon.tsv")
    if not os.path.exists(lex_path):
        raise ConfigurationError(f"missing lexicon {lex_path}")
    splits = {}
    for name in SPLITS:
        split_dir = os.path.join(directory, name)
        docs = read_split(split_dir)
        bounds_path = os.path.join(split_dir, "boundaries.tsv")
        if os.path.exists(bounds_path):
            gold = read_boundaries(bounds_path)
            for doc in docs:
                if doc.id in gold and list(gold[doc.id]) != list(doc.boundaries):
                    raise ConfigurationError(f"boundaries of {doc.id} disagree with its sentences")
        splits[name] = docs
    return DataBundle(splits, load_lexicon(lex_path))


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass
class ModelBundle:
    reverse_model: object
    linreg: object
    weights: object
    ratio: float
    config: ExperimentConfig
    dev_accuracy: float = None

    def features(self):
        out = []
        for name in self.weights.names:
            if name == "reverse_mt":
                out.append(ReverseMTFeature(self.reverse_model, self.config.length_normalize, self.config.alignment))
            elif name == "linreg":
                out.append(LinRegFeature(self.linreg))
            else:
                raise ConfigurationError(f"unknown feature {name!r} in weights file")
        return out

    def boundary_model(self):
        return BoundaryModel.from_weights(self.features(), self.weights)

    def summary(self):
        return {
            "features": list(self.weights.names),
            "weights": [float(w) for w in self.weights.values],
            "initial_loss": self.weights.losses[0] if self.weights.losses else None,
            "final_loss": self.weights.final_loss,
            "epochs": max(len(self.weights.losses) - 1, 0),
            "reverse_model_loglik": list(self.reverse_model.loglik_),
            "linreg": {"theta_mu": self.linreg.theta_mu, "theta_sigma": self.linreg.theta_sigma},
            "naive_ratio": self.ratio,
            "dev_accuracy": self.dev_accuracy,
        }


def train_models(config, data):
    train_docs, dev_docs = data.splits["train"], data.splits["dev"]
    reverse = train_reverse_model(sentence_pairs(train_docs), config.em_iterations)
    linreg = fit_linreg([(len(t), len(s)) for s, t in sentence_pairs(train_docs)])
    bundle = ModelBundle(reverse, linreg, FeatureWeights(np.ones(len(config.features)), tuple(config.features), []), length_ratio_median(train_docs), config)
    rng = np.random.default_rng(config.stage_seeds()["train"])
    samples = build_boundary_samples(dev_docs, config.max_lookahead, rng)
    model = BoundaryModel(
        bundle.features(),
        learning_rate=config.learning_rate,
        epochs=config.epochs,
        init_weight=config.init_weight,
        standardize=config.standardize,
    ).fit(samples)
    bundle.weights = model.weights_
    bundle.dev_accuracy = model.score(samples)
    return bundle


def write_models(models, directory):
    os.makedirs(directory, exist_ok=True)
    save_model(models.reverse_model, os.path.join(directory, "reverse_model.json"))
    save_model(models.linreg, os.path.join(directory, "linreg.json"))
    save_model(models.weights, os.path.join(directory, "weights.json"))
    with open(os.path.join(directory, "training_log.json"), "w", encoding="utf-8") as fh:
        json.dump(models.summary(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_models(config, directory):
    try:
        reverse = load_model(os.path.join(directory, "reverse_model.json"))
        linreg = load_model(os.path.join(directory, "linreg.json"))
        weights = load_model(os.path.join(directory, "weights.json"))
        with open(os.path.join(directory, "training_log.json"), encoding="utf-8") as fh:
            log = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"missing model file: {exc.filename}") from exc
    return ModelBundle(reverse, linreg, weights, log["naive_ratio"], config, log.get("dev_accuracy"))


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------


def run_session(mode, k, doc, lexicon, models, config):
    """Translate one document in one mode; returns its trace."""
    opts = dict(history_cap=config.history_cap, beam=config.beam, max_new=config.max_new)
    stream = doc.source_stream
    if mode.startswith("segmented"):
        decoder = ToyDecoder(lexicon, noise=config.noise, sep_mode="source")
        if mode == "segmented-oracle":
            segmenter = OracleSegmenter(doc.boundaries)
        else:
            segmenter = FixedLengthSegmenter(config.fixed_length)
        return run_segmented_session(stream, segmenter, decoder, k, **opts)
    decoder = ToyDecoder(lexicon, noise=config.noise, sep_mode="terminator")
    if mode == "segfree":
        mechanism = LogLinearMechanism(models.boundary_model())
    elif mode == "naive":
        mechanism = NaiveMechanism(models.ratio, config.naive_cumulative)
    elif mode == "segfree-oracle":
        mechanism = OracleMechanism(doc.boundaries)
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    return run_segfree_session(stream, decoder, k, mechanism, **opts)


@dataclass
class SessionOutcome:
    mode: str
    k: int
    doc_id: str
    trace: SessionTrace
    error: str = None


def simulate(config, data, models, modes=None, ks=None, split="test"):
    """Run every (mode, k, document) session; aborted sessions are recorded, not raised."""
    modes = list(modes or config.modes)
    ks = list(ks or config.ks())
    outcomes = []
    for mode in modes:
        for k in ks:
            for doc in data.splits[split]:
                try:
                    trace = run_session(mode, k, doc, data.lexicon, models, config)
                    outcomes.append(SessionOutcome(mode, k, doc.id, trace))
                except SessionError as exc:
                    outcomes.append(SessionOutcome(mode, k, doc.id, exc.trace or SessionTrace(), str(exc)))
    return outcomes


def trace_path(directory, mode, k, doc_id):
    return os.path.join(directory, mode, f"k{k:02d}", f"{doc_id}.jsonl")


def write_traces(outcomes, directory):
    manifest = []
    for out in outcomes:
        path = trace_path(directory, out.mode, out.k, out.doc_id)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        out.trace.to_jsonl(path)
        manifest.append(
            {
                "mode": out.mode,
                "k": out.k,
                "doc": out.doc_id,
                "path": os.path.relpath(path, directory),
                "status": "ok" if out.error is None else "aborted",
                "error": out.error,
            }
        )
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def read_traces(directory):
    """Load traces listed in ``manifest.json``; missing files are reported."""
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise ConfigurationError(f"no trace manifest in {directory!r}")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    outcomes, missing = [], []
    for entry in manifest:
        trace_file = os.path.join(directory, entry["path"])
        if not os.path.exists(trace_file):
            missing.append(entry["path"])
            continue
        outcomes.append(SessionOutcome(entry["mode"], entry["k"], entry["doc"], SessionTrace.from_jsonl(trace_file), entry.get("error")))
    return outcomes, missing


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def evaluate_outcomes(config, data, outcomes, split="test", missing=()):
    """Score every (mode, k) group and test the designated system pairs."""
    docs = {doc.id: doc for doc in data.splits[split]}
    groups = {}
    for out in outcomes:
        groups.setdefault((out.mode, out.k), []).append(out)
    results, problems = {}, list(missing)
    for (mode, k), group in sorted(groups.items()):
        group.sort(key=lambda o: o.doc_id)
        bad = [o for o in group if o.error is not None or o.doc_id not in docs]
        problems.extend(f"{mode}/k{k}/{o.doc_id}: {o.error or 'unknown document'}" for o in bad)
        good = [o for o in group if o not in bad]
        if not good:
            continue
        try:
            results[(mode, k)] = evaluate_system(
                mode,
                k,
                [o.trace for o in good],
                [docs[o.doc_id].reference_segments for o in good],
                [docs[o.doc_id].boundaries for o in good],
            )
        except SegFreeError as exc:
            problems.append(f"{mode}/k{k}: {exc}")
    significance = []
    for a, b in config.significance_pairs:
        for k in sorted({k for (_, k) in results}):
            ra, rb = results.get((a, k)), results.get((b, k))
            if ra is None or rb is None or ra.ref_segments != rb.ref_segments:
                continue
            p = bootstrap_significance(ra.hyp_segments, rb.hyp_segments, ra.ref_segments, config.resamples, config.seed)
            significance.append({"a": a, "b": b, "k": k, "delta_BLEU": ra.bleu - rb.bleu, "p_value": p})
    report = {
        "status": "ok" if not problems else "warning",
        "problems": problems,
        "systems": [r.summary() for _, r in sorted(results.items())],
        "significance": significance,
    }
    return report, results


def write_report(report, results, directory):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    emit_curve(list(results.values()), os.path.join(directory, "curve.csv"))
