"""Log-linear memory mechanism: feature functions, position posterior, trainers.

Positions ``a`` are 1-based offsets from the start of the active chunk.  All
scoring happens in log space; ``position_posterior`` and ``select_boundary``
accept strictly positive raw scores for convenience.
"""

from dataclasses import dataclass, field
import json
import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_float, check_positive_int, check_tokens
from .exceptions import (
    BoundaryDomainError,
    ConfigurationError,
    DegenerateDesignError,
    TrainingError,
)

NULL = "<null>"
PROB_FLOOR = 1e-10
SIGMA_MIN = 0.5
MODEL_FORMAT_VERSION = 1


# --------------------------------------------------------------------------
# Reverse lexical model (IBM Model 1, target -> source)
# --------------------------------------------------------------------------


class ReverseTranslationModel(BaseEstimator):
    """IBM Model 1 estimating t(source word | target word), NULL included.

    Parameters
    ----------
    n_iter : int
        Number of EM iterations run from a uniform table.
    prob_floor : float
        Lower bound applied to every per-word factor when scoring, so unseen
        source words keep the score strictly positive.

    Attributes
    ----------
    source_vocab_ : dict
        Source word -> row of ``table_``.
    target_vocab_ : dict
        Target word -> column of ``table_``; ``NULL`` is column 0.
    table_ : ndarray of shape (n_source, n_target + 1)
        Columns sum to one.
    loglik_ : list of float
        Training log-likelihood of the initial table and after every
        iteration.
    """

    def __init__(self, n_iter=10, prob_floor=PROB_FLOOR):
        self.n_iter = n_iter
        self.prob_floor = prob_floor

    def fit(self, sources, targets, callback=None):
        check_positive_int(self.n_iter, "n_iter")
        sources = [check_tokens(s, "source sentence") for s in sources]
        targets = [check_tokens(t, "target sentence") for t in targets]
        if not sources or len(sources) != len(targets):
            raise ConfigurationError("reverse model needs a non-empty parallel corpus")

        self.source_vocab_ = {w: i for i, w in enumerate(sorted({w for s in sources for w in s}))}
        tgt_words = sorted({w for t in targets for w in t} - {NULL})
        self.target_vocab_ = {NULL: 0, **{w: i + 1 for i, w in enumerate(tgt_words)}}
        if not self.source_vocab_:
            raise ConfigurationError("corpus has no source words")

        pairs = []
        for s, t in zip(sources, targets):
            if not s:
                continue
            s_ids = np.array([self.source_vocab_[w] for w in s])
            t_ids = np.array([0] + [self.target_vocab_[w] for w in t])
            pairs.append((s_ids, t_ids))

        table = np.full((len(self.source_vocab_), len(self.target_vocab_)), 1.0 / len(self.source_vocab_))
        self.loglik_ = []
        for it in range(self.n_iter):
            counts = np.zeros_like(table)
            loglik = 0.0
            for s_ids, t_ids in pairs:
                sub = table[np.ix_(s_ids, t_ids)]
                denom = sub.sum(axis=1)
                loglik += float(np.sum(np.log(denom / len(t_ids))))
                np.add.at(counts, (s_ids[:, None], t_ids[None, :]), sub / denom[:, None])
            self.loglik_.append(loglik)
            totals = counts.sum(axis=0)
            # target words never paired with a non-empty source keep their column
            seen = totals > 0
            table[:, seen] = counts[:, seen] / totals[seen]
            if callback is not None:
                self.table_ = table
                callback(it, self)
        self.table_ = table
        self.loglik_.append(self._loglik(pairs))
        return self

    def _loglik(self, pairs):
        total = 0.0
        for s_ids, t_ids in pairs:
            total += float(np.sum(np.log(self.table_[np.ix_(s_ids, t_ids)].sum(axis=1) / len(t_ids))))
        return total

    def prob(self, source_word, target_word):
        check_is_fitted(self, "table_")
        i = self.source_vocab_.get(source_word)
        j = self.target_vocab_.get(target_word)
        if i is None or j is None:
            return 0.0
        return float(self.table_[i, j])

    def word_factors(self, x, y_hat, alignment="sum"):
        """Per-word Model 1 factors, floored.

        ``"sum"`` gives ``(1/(m+1)) * sum_t t(x_s|t)``; ``"viterbi"`` keeps
        only the best aligned target word, ``max_t t(x_s|t)``.
        """
        check_is_fitted(self, "table_")
        if alignment not in ("sum", "viterbi"):
            raise ConfigurationError(f"unknown alignment {alignment!r}")
        cols = [0] + [self.target_vocab_[w] for w in y_hat if w in self.target_vocab_]
        norm = 1.0 / (len(y_hat) + 1)
        out = np.full(len(x), self.prob_floor)
        for s, w in enumerate(x):
            i = self.source_vocab_.get(w)
            if i is None:
                continue
            row = self.table_[i, cols]
            value = float(row.max()) if alignment == "viterbi" else norm * float(row.sum())
            out[s] = max(self.prob_floor, value)
        return out

    def prefix_log_scores(self, x, y_hat, alignment="sum"):
        """``log p(x_1^a | y_hat)`` for every ``a`` in ``1..len(x)``."""
        return np.cumsum(np.log(self.word_factors(x, y_hat, alignment)))

    # serialisation -------------------------------------------------------

    def to_dict(self):
        check_is_fitted(self, "table_")
        src = sorted(self.source_vocab_, key=self.source_vocab_.get)
        tgt = sorted(self.target_vocab_, key=self.target_vocab_.get)
        table = {}
        for j, t in enumerate(tgt):
            col = self.table_[:, j]
            nz = np.flatnonzero(col > 0)
            table[t] = {src[i]: float(col[i]) for i in nz}
        return {
            "format": "segfree.reverse-model",
            "version": MODEL_FORMAT_VERSION,
            "prob_floor": self.prob_floor,
            "n_iter": self.n_iter,
            "source_vocab": src,
            "target_vocab": tgt,
            "loglik": self.loglik_,
            "table": table,
        }

    @classmethod
    def from_dict(cls, data):
        _check_format(data, "segfree.reverse-model")
        model = cls(n_iter=data["n_iter"], prob_floor=data["prob_floor"])
        model.source_vocab_ = {w: i for i, w in enumerate(data["source_vocab"])}
        model.target_vocab_ = {w: i for i, w in enumerate(data["target_vocab"])}
        table = np.zeros((len(model.source_vocab_), len(model.target_vocab_)))
        for t, col in data["table"].items():
            j = model.target_vocab_[t]
            for s, p in col.items():
                table[model.source_vocab_[s], j] = p
        model.table_ = table
        model.loglik_ = list(data.get("loglik", []))
        return model


def train_reverse_model(corpus, iterations=10, prob_floor=PROB_FLOOR):
    """Fit a :class:`ReverseTranslationModel` on ``(source, target)`` pairs."""
    corpus = list(corpus)
    if not corpus:
        raise ConfigurationError("train_reverse_model needs a non-empty corpus")
    sources = [s for s, _ in corpus]
    targets = [t for _, t in corpus]
    return ReverseTranslationModel(n_iter=iterations, prob_floor=prob_floor).fit(sources, targets)


def reverse_mt_score(model, x, y_hat, a):
    """Model 1 likelihood of the chunk prefix ``x[:a]`` given ``y_hat``."""
    x = check_tokens(x, "x")
    y_hat = check_tokens(y_hat, "y_hat")
    if not y_hat:
        raise ConfigurationError("y_hat must be non-empty")
    if isinstance(a, bool) or int(a) != a or not 1 <= a <= len(x):
        raise BoundaryDomainError(f"a={a!r} outside [1, {len(x)}]")
    return float(np.prod(model.word_factors(x[: int(a)], y_hat)))


# --------------------------------------------------------------------------
# Length regression feature
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LinRegParams:
    theta_mu: float
    theta_sigma: float
    sigma_min: float = SIGMA_MIN

    def to_dict(self):
        return {
            "format": "segfree.linreg",
            "version": MODEL_FORMAT_VERSION,
            "theta_mu": self.theta_mu,
            "theta_sigma": self.theta_sigma,
            "sigma_min": self.sigma_min,
        }

    @classmethod
    def from_dict(cls, data):
        _check_format(data, "segfree.linreg")
        return cls(data["theta_mu"], data["theta_sigma"], data["sigma_min"])


def fit_linreg(samples, sigma_min=SIGMA_MIN):
    """OLS through the origin of chunk length on target length.

    ``samples`` holds ``(target_length, chunk_length)`` pairs.
    """
    samples = [(float(y), float(a)) for y, a in samples]
    if len(samples) < 2:
        raise ConfigurationError("fit_linreg needs at least two samples")
    y = np.array([s[0] for s in samples])
    a = np.array([s[1] for s in samples])
    yy = float(y @ y)
    if yy == 0.0:
        raise DegenerateDesignError("every target length is zero")
    theta_mu = float(a @ y) / yy
    resid = a - theta_mu * y
    sigma = math.sqrt(float(resid @ resid) / (len(samples) - 1))
    return LinRegParams(theta_mu, max(sigma_min, sigma), sigma_min)


def gaussian_log_score(params, a, y_len):
    a = np.asarray(a, dtype=float)
    mu = params.theta_mu * y_len
    s = params.theta_sigma
    return -0.5 * ((a - mu) / s) ** 2 - math.log(s * math.sqrt(2 * math.pi))


def gaussian_score(params, a, y_len):
    """Normal density at ``a`` with mean ``theta_mu * y_len``."""
    return float(np.exp(gaussian_log_score(params, a, y_len)))


class LengthRegressor(BaseEstimator):
    """Estimator wrapper around :func:`fit_linreg`."""

    def __init__(self, sigma_min=SIGMA_MIN):
        self.sigma_min = sigma_min

    def fit(self, target_lengths, chunk_lengths):
        self.params_ = fit_linreg(zip(target_lengths, chunk_lengths), self.sigma_min)
        self.theta_mu_ = self.params_.theta_mu
        self.theta_sigma_ = self.params_.theta_sigma
        return self

    def predict(self, target_lengths):
        check_is_fitted(self, "params_")
        return self.theta_mu_ * np.asarray(target_lengths, dtype=float)


# --------------------------------------------------------------------------
# Feature functions
# --------------------------------------------------------------------------


class ReverseMTFeature:
    """``h(a) = p(x_1^a | y_hat)`` under a reverse lexical model.

    With ``length_normalize`` the log-likelihood is divided by ``a``
    (per-word geometric mean), which removes the bias towards short prefixes.
    """

    name = "reverse_mt"

    def __init__(self, model, length_normalize=True, alignment="sum"):
        self.model = model
        self.length_normalize = length_normalize
        self.alignment = alignment

    def log_scores(self, x, y_hat):
        scores = self.model.prefix_log_scores(x, y_hat, self.alignment)
        if self.length_normalize:
            scores = scores / np.arange(1, len(x) + 1)
        return scores


class LinRegFeature:
    """``h(a) = N(a | theta_mu * |y_hat|, theta_sigma^2)``."""

    name = "linreg"

    def __init__(self, params):
        self.params = params

    def log_scores(self, x, y_hat):
        return gaussian_log_score(self.params, np.arange(1, len(x) + 1), len(y_hat))


class CallableFeature:
    """Adapter turning ``fn(x, y_hat) -> positive scores`` into a feature."""

    def __init__(self, fn, name="custom"):
        self.fn = fn
        self.name = name

    def log_scores(self, x, y_hat):
        h = np.asarray(self.fn(x, y_hat), dtype=float)
        if np.any(h <= 0) or not np.all(np.isfinite(h)):
            raise BoundaryDomainError(f"feature {self.name} produced non-positive scores")
        return np.log(h)


def feature_log_matrix(features, x, y_hat):
    """Stack the log-scores of every feature into an ``(F, len(x))`` array."""
    return np.vstack([np.asarray(f.log_scores(x, y_hat), dtype=float) for f in features])


# --------------------------------------------------------------------------
# Posterior and boundary selection
# --------------------------------------------------------------------------


def _as_log_scores(scores):
    h = np.atleast_2d(np.asarray(scores, dtype=float))
    if h.size == 0:
        raise BoundaryDomainError("scores must cover at least one position")
    if np.any(~np.isfinite(h)) or np.any(h <= 0):
        raise BoundaryDomainError("feature scores must be finite and strictly positive")
    return np.log(h)


def _weights(weights, n_features):
    lam = np.asarray(getattr(weights, "values", weights), dtype=float).ravel()
    if lam.shape != (n_features,):
        raise ConfigurationError(f"expected {n_features} weights, got {lam.shape[0]}")
    if not np.all(np.isfinite(lam)):
        raise ConfigurationError("weights must be finite")
    return lam


def log_linear_scores(log_h, weights):
    """``sum_f lambda_f log h_f(a)`` for each position."""
    log_h = np.atleast_2d(log_h)
    return _weights(weights, log_h.shape[0]) @ log_h


def posterior_from_log_scores(log_h, weights):
    s = log_linear_scores(log_h, weights)
    s = s - s.max()
    p = np.exp(s)
    return p / p.sum()


def argmax_last(values):
    """Index of the maximum, ties resolved towards the largest index."""
    values = np.asarray(values)
    return len(values) - 1 - int(np.argmax(values[::-1]))


def position_posterior(scores, weights):
    """Normalised log-linear posterior over chunk positions.

    ``scores`` is an ``(F, n)`` array of strictly positive feature values.
    """
    return posterior_from_log_scores(_as_log_scores(scores), weights)


def select_boundary(scores, weights):
    """1-based position maximising the weighted log score (ties -> largest)."""
    return argmax_last(log_linear_scores(_as_log_scores(scores), weights)) + 1


# --------------------------------------------------------------------------
# Weight training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryTrainingSample:
    """Chunk ``x`` with target segment ``y``; ``label`` is the true last position.

    Without lookahead the chunk is exactly the source sentence and the label
    equals ``len(x)``.  Samples built with lookahead append the first words
    of the following sentence to ``x`` and keep ``label`` at the sentence end.
    """

    x: tuple
    y: tuple
    label: int = None

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(self.x))
        object.__setattr__(self, "y", tuple(self.y))
        if not self.x:
            raise ConfigurationError("training chunk must be non-empty")
        if self.label is None:
            object.__setattr__(self, "label", len(self.x))
        if not 1 <= self.label <= len(self.x):
            raise ConfigurationError(f"label {self.label} outside [1, {len(self.x)}]")


@dataclass
class FeatureWeights:
    values: np.ndarray
    names: tuple = ()
    losses: list = field(default_factory=list)

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else None

    def to_dict(self):
        return {
            "format": "segfree.weights",
            "version": MODEL_FORMAT_VERSION,
            "features": list(self.names),
            "lambda": [float(v) for v in self.values],
            "final_loss": self.final_loss,
            "n_epochs": max(0, len(self.losses) - 1),
        }

    @classmethod
    def from_dict(cls, data):
        _check_format(data, "segfree.weights")
        losses = [] if data.get("final_loss") is None else [data["final_loss"]]
        return cls(np.array(data["lambda"], dtype=float), tuple(data["features"]), losses)


def _pack(samples, features):
    mats = [feature_log_matrix(features, s.x, s.y) for s in samples]
    n_feat = len(features)
    width = max(m.shape[1] for m in mats)
    H = np.zeros((len(mats), n_feat, width))
    mask = np.zeros((len(mats), width), dtype=bool)
    for i, m in enumerate(mats):
        if not np.all(np.isfinite(m)):
            raise TrainingError(f"non-finite feature value in sample {i}")
        H[i, :, : m.shape[1]] = m
        mask[i, : m.shape[1]] = True
    labels = np.array([s.label - 1 for s in samples])
    return H, mask, labels


def _loss_and_grad(lam, H, mask, labels):
    s = np.einsum("f,nfa->na", lam, H)
    s = np.where(mask, s, -np.inf)
    smax = s.max(axis=1, keepdims=True)
    e = np.exp(s - smax)
    z = e.sum(axis=1, keepdims=True)
    p = e / z
    rows = np.arange(len(labels))
    log_p_true = s[rows, labels] - (smax[:, 0] + np.log(z[:, 0]))
    loss = -float(np.mean(log_p_true))
    expected = np.einsum("na,nfa->nf", p, H)
    grad = np.mean(expected - H[rows, :, labels], axis=0)
    return loss, grad


def train_weights(samples, features, learning_rate=0.1, epochs=200, init=1.0, standardize=True):
    """Full-batch gradient descent on the mean cross-entropy of the labels.

    With ``standardize`` each feature's log-scores are divided by their
    within-chunk spread while optimising, and the result is mapped back, so
    one learning rate suits features of very different magnitude.
    """
    samples = list(samples)
    features = list(features)
    if not samples:
        raise ConfigurationError("train_weights needs at least one sample")
    if not features:
        raise ConfigurationError("train_weights needs at least one feature")
    epochs = check_positive_int(epochs, "epochs", minimum=0)
    check_positive_float(learning_rate, "learning_rate")

    H, mask, labels = _pack(samples, features)
    scale = np.ones(len(features))
    if standardize:
        centred = H - (np.where(mask[:, None, :], H, 0).sum(axis=2) / mask.sum(axis=1)[:, None])[:, :, None]
        spread = np.sqrt((np.where(mask[:, None, :], centred, 0) ** 2).sum(axis=(0, 2)) / mask.sum())
        scale = np.where(spread > 1e-12, spread, 1.0)
    Hs = H / scale[None, :, None]
    theta = np.full(len(features), float(init)) * scale

    losses = []
    # overflow is reported as a TrainingError below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs + 1):
            loss, grad = _loss_and_grad(theta, Hs, mask, labels)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError(f"loss became non-finite at epoch {epoch}", epoch=epoch)
            losses.append(loss)
            if epoch == epochs:
                break
            theta = theta - learning_rate * grad
    return FeatureWeights(theta / scale, tuple(f.name for f in features), losses)


class BoundaryModel(BaseEstimator):
    """Log-linear boundary selector with a scikit-learn style interface.

    ``fit`` takes a list of ``(x, y_hat)`` pairs (or training samples) and
    1-based labels; ``predict`` returns the selected boundary for each pair.
    """

    def __init__(self, features=(), learning_rate=0.1, epochs=200, init_weight=1.0, standardize=True):
        self.features = features
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.init_weight = init_weight
        self.standardize = standardize

    @staticmethod
    def _samples(X, y=None):
        out = []
        for i, item in enumerate(X):
            if isinstance(item, BoundaryTrainingSample):
                out.append(item if y is None else BoundaryTrainingSample(item.x, item.y, int(y[i])))
            else:
                x, y_hat = item
                out.append(BoundaryTrainingSample(tuple(x), tuple(y_hat), None if y is None else int(y[i])))
        return out

    def fit(self, X, y=None):
        self.weights_ = train_weights(
            self._samples(X, y),
            self.features,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            init=self.init_weight,
            standardize=self.standardize,
        )
        self.coef_ = self.weights_.values
        self.loss_history_ = self.weights_.losses
        return self

    @classmethod
    def from_weights(cls, features, weights):
        model = cls(features=features)
        model.weights_ = weights
        model.coef_ = weights.values
        model.loss_history_ = list(weights.losses)
        return model

    def log_scores(self, x, y_hat):
        check_is_fitted(self, "coef_")
        return log_linear_scores(feature_log_matrix(self.features, x, y_hat), self.coef_)

    def posterior(self, x, y_hat):
        check_is_fitted(self, "coef_")
        return posterior_from_log_scores(feature_log_matrix(self.features, x, y_hat), self.coef_)

    def select(self, x, y_hat):
        return argmax_last(self.log_scores(x, y_hat)) + 1

    def predict_proba(self, X):
        return [self.posterior(x, y_hat) for x, y_hat in self._pairs(X)]

    def predict(self, X):
        return np.array([self.select(x, y_hat) for x, y_hat in self._pairs(X)], dtype=int)

    def score(self, X, y=None):
        """Fraction of pairs whose selected boundary equals the label."""
        samples = self._samples(X, y)
        pred = self.predict([(s.x, s.y) for s in samples])
        return float(np.mean(pred == np.array([s.label for s in samples])))

    @staticmethod
    def _pairs(X):
        for item in X:
            if isinstance(item, BoundaryTrainingSample):
                yield item.x, item.y
            else:
                yield item


# --------------------------------------------------------------------------
# Model files
# --------------------------------------------------------------------------


def _check_format(data, expected):
    if data.get("format") != expected:
        raise ConfigurationError(f"expected a {expected} file, got {data.get('format')!r}")
    if data.get("version") != MODEL_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported {expected} version {data.get('version')!r}")


def save_model(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj.to_dict(), fh, indent=1, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def load_model(path):
    """Load any model file written by :func:`save_model`."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    kinds = {
        "segfree.reverse-model": ReverseTranslationModel,
        "segfree.linreg": LinRegParams,
        "segfree.weights": FeatureWeights,
    }
    if data.get("format") not in kinds:
        raise ConfigurationError(f"{path}: unknown model format {data.get('format')!r}")
    return kinds[data["format"]].from_dict(data)
