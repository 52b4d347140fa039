import itertools
import math

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest
from sklearn.base import clone

from segfree.exceptions import BoundaryDomainError, ConfigurationError, DegenerateDesignError, TrainingError
from segfree.features import (
    NULL,
    PROB_FLOOR,
    SIGMA_MIN,
    BoundaryModel,
    BoundaryTrainingSample,
    CallableFeature,
    FeatureWeights,
    LengthRegressor,
    LinRegFeature,
    LinRegParams,
    ReverseMTFeature,
    ReverseTranslationModel,
    feature_log_matrix,
    fit_linreg,
    gaussian_score,
    load_model,
    position_posterior,
    reverse_mt_score,
    save_model,
    select_boundary,
    train_reverse_model,
    train_weights,
)


def hand_model(table, sources, targets):
    model = ReverseTranslationModel()
    model.source_vocab_ = {w: i for i, w in enumerate(sources)}
    model.target_vocab_ = {NULL: 0, **{w: i + 1 for i, w in enumerate(targets)}}
    model.table_ = np.asarray(table, dtype=float)
    model.loglik_ = []
    return model


def model1_em_reference(corpus, iterations):
    """Plain dictionary IBM Model 1 (target -> source) used as an oracle."""
    src_vocab = sorted({w for s, _ in corpus for w in s})
    tgt_vocab = [NULL] + sorted({w for _, t in corpus for w in t})
    t = {(s, y): 1.0 / len(src_vocab) for s in src_vocab for y in tgt_vocab}
    for _ in range(iterations):
        count = dict.fromkeys(t, 0.0)
        total = dict.fromkeys(tgt_vocab, 0.0)
        for src, tgt in corpus:
            ys = [NULL] + list(tgt)
            for s in src:
                z = sum(t[(s, y)] for y in ys)
                for y in ys:
                    c = t[(s, y)] / z
                    count[(s, y)] += c
                    total[y] += c
        for (s, y) in t:
            if total[y] > 0:
                t[(s, y)] = count[(s, y)] / total[y]
    return t


# --------------------------------------------------------------------------
# Reverse-MT
# --------------------------------------------------------------------------


def test_reverse_score_single_pair():
    model = hand_model([[0.0, 1.0]], ["a"], ["A"])
    assert reverse_mt_score(model, ["a"], ["A"], 1) == pytest.approx(0.5)


def test_reverse_score_floor_for_unseen_word():
    model = hand_model([[0.0, 1.0]], ["a"], ["A"])
    assert reverse_mt_score(model, ["zz"], ["A"], 1) == pytest.approx(PROB_FLOOR)


@pytest.mark.parametrize("a", [0, 3, -1])
def test_reverse_score_domain(a):
    model = hand_model([[0.5, 0.5], [0.5, 0.5]], ["a", "b"], ["A"])
    with pytest.raises(BoundaryDomainError):
        reverse_mt_score(model, ["a", "b"], ["A"], a)


def test_reverse_score_needs_target():
    model = hand_model([[1.0, 1.0]], ["a"], ["A"])
    with pytest.raises(ConfigurationError):
        reverse_mt_score(model, ["a"], [], 1)


def test_reverse_score_uniform_closed_form():
    V = 4
    sources = ["a", "b", "c", "d"]
    model = hand_model(np.full((V, 3), 1.0 / V), sources, ["A", "B"])
    for a in range(1, 5):
        for y in (["A"], ["A", "B"], ["B", "B", "A"]):
            assert reverse_mt_score(model, sources, y, a) == pytest.approx((1.0 / V) ** a, rel=1e-12)


def test_em_one_pair_concentrates():
    model = train_reverse_model([(["a"], ["A"])] * 10, iterations=5)
    assert model.prob("a", "A") > 0.9


def test_em_single_iteration_symmetry():
    model = train_reverse_model([(["a", "b"], ["A"])], iterations=1)
    assert model.prob("a", "A") == pytest.approx(0.5)
    assert model.prob("b", "A") == pytest.approx(0.5)


def test_em_disjoint_pairs():
    corpus = [(["a"], ["A"]), (["b"], ["B"])]
    model = train_reverse_model(corpus, iterations=10)
    ref = model1_em_reference(corpus, 10)
    # the NULL word absorbs part of the mass, so the limit is approached slowly
    assert model.prob("a", "A") == pytest.approx(ref[("a", "A")], abs=1e-12)
    assert model.prob("a", "A") >= 0.99
    assert model.prob("b", "B") >= 0.99


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_em_matches_reference_implementation(seed):
    rng = np.random.default_rng(seed)
    src_words = ["a", "b", "c", "d", "e"]
    tgt_words = ["A", "B", "C"]
    corpus = [
        (list(rng.choice(src_words, size=rng.integers(1, 5))), list(rng.choice(tgt_words, size=rng.integers(1, 4))))
        for _ in range(6)
    ]
    model = train_reverse_model(corpus, iterations=4)
    ref = model1_em_reference(corpus, 4)
    for (s, y), value in ref.items():
        assert model.prob(s, y) == pytest.approx(value, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_em_loglik_monotone_and_normalized(seed):
    rng = np.random.default_rng(seed)
    corpus = [
        (list(rng.choice(list("abcdefg"), size=rng.integers(1, 6))), list(rng.choice(list("ABCDE"), size=rng.integers(1, 6))))
        for _ in range(15)
    ]
    tables = []
    model = ReverseTranslationModel(n_iter=6).fit(
        [s for s, _ in corpus], [t for _, t in corpus], callback=lambda it, m: tables.append(m.table_.copy())
    )
    assert len(model.loglik_) == 7
    assert np.all(np.diff(model.loglik_) >= -1e-9)
    for table in tables:
        assert np.max(np.abs(table.sum(axis=0) - 1.0)) < 1e-6
        assert np.all(table >= 0)


def test_em_rejects_empty_corpus():
    with pytest.raises(ConfigurationError):
        train_reverse_model([])


def test_reverse_model_roundtrip(tmp_path):
    model = train_reverse_model([(["a", "b"], ["A", "B"]), (["b"], ["B"])], iterations=3)
    path = tmp_path / "rev.json"
    save_model(model, path)
    back = load_model(path)
    assert np.array_equal(back.table_, model.table_)
    assert back.source_vocab_ == model.source_vocab_
    assert reverse_mt_score(back, ["a", "b"], ["A"], 2) == reverse_mt_score(model, ["a", "b"], ["A"], 2)


def test_load_model_checks_header(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "segfree.linreg", "version": 99}')
    with pytest.raises(ConfigurationError):
        load_model(path)


def test_reverse_feature_normalization():
    model = train_reverse_model([(["a", "b"], ["A", "B"])], iterations=3)
    x, y = ["a", "b", "zz"], ["A", "B"]
    raw = ReverseMTFeature(model, length_normalize=False).log_scores(x, y)
    norm = ReverseMTFeature(model).log_scores(x, y)
    assert np.allclose(raw, np.cumsum(np.log(model.word_factors(x, y))))
    assert np.allclose(norm, raw / np.arange(1, 4))
    viterbi = ReverseMTFeature(model, length_normalize=False, alignment="viterbi").log_scores(x, y)
    best = [max(model.prob(w, t) for t in [NULL] + y) for w in x]
    assert np.allclose(viterbi, np.cumsum(np.log(np.maximum(best, PROB_FLOOR))))
    with pytest.raises(ConfigurationError):
        model.word_factors(x, y, alignment="other")


# --------------------------------------------------------------------------
# Length regression
# --------------------------------------------------------------------------


def test_fit_linreg_examples():
    p = fit_linreg([(2, 2), (4, 4)])
    assert p.theta_mu == pytest.approx(1.0) and p.theta_sigma == SIGMA_MIN
    p = fit_linreg([(1, 2), (2, 4), (3, 6)])
    assert p.theta_mu == pytest.approx(2.0) and p.theta_sigma == SIGMA_MIN
    p = fit_linreg([(2, 1), (2, 3)])
    # hand OLS through the origin: (1*2 + 3*2) / (4 + 4) = 1; residuals -1, +1
    assert p.theta_mu == pytest.approx(1.0)
    assert p.theta_sigma == pytest.approx(math.sqrt(2.0))


def test_fit_linreg_errors():
    with pytest.raises(DegenerateDesignError):
        fit_linreg([(0, 1), (0, 2)])
    with pytest.raises(ConfigurationError):
        fit_linreg([(1, 1)])


def test_gaussian_score_values():
    p = LinRegParams(1.0, 1.0)
    assert gaussian_score(p, 3, 3) == pytest.approx(0.398942, abs=1e-6)
    assert gaussian_score(p, 4, 3) == pytest.approx(0.241971, abs=1e-6)
    wide = LinRegParams(1.0, 2.0)
    assert gaussian_score(wide, 3, 3) == pytest.approx(gaussian_score(p, 3, 3) / 2)


def test_linreg_roundtrip_and_estimator(tmp_path):
    params = fit_linreg([(2, 1), (2, 3), (4, 5)])
    save_model(params, tmp_path / "lin.json")
    assert load_model(tmp_path / "lin.json") == params
    reg = LengthRegressor().fit([2, 2, 4], [1, 3, 5])
    assert reg.params_ == params
    assert np.allclose(reg.predict([1, 2]), [params.theta_mu, 2 * params.theta_mu])


# --------------------------------------------------------------------------
# Posterior and boundary
# --------------------------------------------------------------------------


def test_posterior_examples():
    assert np.allclose(position_posterior([[0.3, 0.7, 0.2, 0.9]], [0.0]), 0.25)
    assert np.allclose(position_posterior([[0.2, 0.8]], [1.0]), [0.2, 0.8])
    assert np.allclose(position_posterior([[1, 2], [4, 1]], [1, 1]), [2 / 3, 1 / 3])


def test_select_examples():
    assert select_boundary([[0.1, 0.2, 0.3]], [1.0]) == 3
    assert select_boundary([[1, 2], [4, 1]], [1, 1]) == 1
    assert select_boundary([[0.5, 0.5, 0.5]], [1.0]) == 3


@pytest.mark.parametrize("bad", [[[0.0, 1.0]], [[-1.0, 1.0]], [[np.inf, 1.0]]])
def test_posterior_domain(bad):
    with pytest.raises(BoundaryDomainError):
        position_posterior(bad, [1.0])


def test_weight_count_checked():
    with pytest.raises(ConfigurationError):
        position_posterior([[1.0, 2.0]], [1.0, 1.0])


scores_strategy = st.integers(1, 8).flatmap(
    lambda n: st.tuples(
        st.lists(st.lists(st.floats(1e-6, 1e3), min_size=n, max_size=n), min_size=1, max_size=3),
        st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    )
)


@settings(max_examples=300, deadline=None)
@given(scores_strategy)
def test_posterior_sums_to_one_and_matches_select(data):
    h, lam = data
    lam = lam[: len(h)]
    p = position_posterior(h, lam)
    assert abs(p.sum() - 1.0) < 1e-9 and np.all(p >= 0)
    a_hat = select_boundary(h, lam)
    assert p[a_hat - 1] == p.max()


@settings(max_examples=200, deadline=None)
@given(scores_strategy, st.lists(st.floats(1e-3, 1e3), min_size=3, max_size=3))
def test_select_invariant_to_feature_rescaling(data, factors):
    h, lam = data
    lam = lam[: len(h)]
    # snap scores to a grid so exact ties survive the rescaling
    h = np.round(np.asarray(h), 0) + 1.0
    scaled = h * np.asarray(factors[: len(h)])[:, None]
    raw = np.asarray(lam) @ np.log(h)
    gap = np.sort(raw)[-1] - np.sort(raw)[-2] if raw.size > 1 else 1.0
    if 0 < gap < 1e-9:
        return
    assert select_boundary(scaled, lam) == select_boundary(h, lam)


# --------------------------------------------------------------------------
# Weight training
# --------------------------------------------------------------------------


def indicator_feature():
    return CallableFeature(lambda x, y: [2.0 if i == len(x) - 1 else 1.0 for i in range(len(x))], "indicator")


def indicator_samples(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return [BoundaryTrainingSample(tuple(f"w{j}" for j in range(n_)), ("Y",)) for n_ in rng.integers(2, 9, size=n)]


def test_indicator_training_converges():
    samples = indicator_samples()
    feat = indicator_feature()
    w = train_weights(samples, [feat], learning_rate=0.01, epochs=1000)
    assert np.all(np.diff(w.losses) < 0)
    post = [position_posterior(np.exp(feature_log_matrix([feat], s.x, s.y)), w.values)[-1] for s in samples]
    assert min(post) > 0.9


def test_zero_epochs_keeps_init():
    w = train_weights(indicator_samples(5), [indicator_feature()], epochs=0)
    assert np.array_equal(w.values, [1.0])
    assert len(w.losses) == 1


def test_constant_feature_untouched():
    const = CallableFeature(lambda x, y: [3.0] * len(x), "const")
    w = train_weights(indicator_samples(10), [indicator_feature(), const], learning_rate=0.1, epochs=20)
    assert w.values[1] == pytest.approx(1.0)
    assert w.names == ("indicator", "const")


def test_gradient_matches_finite_differences():
    feats = [indicator_feature(), CallableFeature(lambda x, y: np.arange(1, len(x) + 1, dtype=float), "ramp")]
    samples = indicator_samples(12, seed=3)

    def loss(lam):
        total = 0.0
        for s in samples:
            p = position_posterior(np.exp(feature_log_matrix(feats, s.x, s.y)), lam)
            total -= math.log(p[s.label - 1])
        return total / len(samples)

    lam = np.array([0.3, -0.2])
    step = train_weights(samples, feats, learning_rate=1e-3, epochs=1, init=0.0, standardize=False)
    # one step from zero: lambda_1 = -lr * grad(0)
    eps = 1e-6
    grad = [(loss(np.array([eps, 0])) - loss(np.array([-eps, 0]))) / (2 * eps), (loss(np.array([0, eps])) - loss(np.array([0, -eps]))) / (2 * eps)]
    assert np.allclose(step.values, -1e-3 * np.array(grad), atol=1e-9)
    assert step.losses[0] == pytest.approx(loss(np.zeros(2)))
    assert loss(lam) > 0


def test_divergence_names_epoch():
    feat = CallableFeature(lambda x, y: np.exp(np.arange(len(x), dtype=float) * 300.0), "huge")
    samples = [BoundaryTrainingSample(("a", "b", "c"), ("Y",), 1)]
    with pytest.raises(TrainingError) as info:
        train_weights(samples, [feat], learning_rate=1e307, epochs=5, standardize=False)
    assert info.value.epoch is not None


def test_sample_label_defaults_and_validation():
    assert BoundaryTrainingSample(("a", "b"), ("A",)).label == 2
    with pytest.raises(ConfigurationError):
        BoundaryTrainingSample((), ("A",))
    with pytest.raises(ConfigurationError):
        BoundaryTrainingSample(("a",), ("A",), 2)


def test_weights_roundtrip(tmp_path):
    w = FeatureWeights(np.array([0.5, 2.0]), ("reverse_mt", "linreg"), [1.0, 0.5])
    save_model(w, tmp_path / "w.json")
    back = load_model(tmp_path / "w.json")
    assert np.array_equal(back.values, w.values) and back.names == w.names and back.final_loss == 0.5


def test_boundary_model_estimator_api():
    model = BoundaryModel([indicator_feature()], learning_rate=0.01, epochs=300)
    assert model.get_params()["learning_rate"] == 0.01
    assert clone(model).get_params()["epochs"] == 300
    samples = indicator_samples(20)
    X = [(s.x, s.y) for s in samples]
    y = [s.label for s in samples]
    model.fit(X, y)
    assert list(model.predict(X)) == y
    assert model.score(X, y) == 1.0
    proba = model.predict_proba(X[:2])
    assert all(abs(p.sum() - 1) < 1e-9 for p in proba)
    assert model.select(["a", "b", "c"], ["Y"]) == 3


def test_boundary_model_requires_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        BoundaryModel([indicator_feature()]).select(["a"], ["A"])


def test_linreg_feature_matches_density():
    params = LinRegParams(1.5, 0.8)
    feat = LinRegFeature(params)
    x = ["a", "b", "c", "d"]
    assert np.allclose(np.exp(feat.log_scores(x, ["A", "B"])), [gaussian_score(params, a, 2) for a in range(1, 5)])
