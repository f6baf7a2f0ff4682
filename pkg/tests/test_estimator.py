import numpy as np
import pytest
from sklearn.base import clone

from ioparse.estimator import InsideOutsideParser, check_sentences
from ioparse.parser import parse_sexpr
from ioparse.synth import SynthGrammar


@pytest.fixture(scope="module")
def fitted():
    grammar = SynthGrammar(seed=4)
    samples = grammar.generate(60)
    est = InsideOutsideParser(dim=8, steps=10, batch_size=8, negatives=10, seed=2)
    est.fit([s.tokens for s in samples])
    return est, samples


class TestSklearnSurface:
    def test_get_params_round_trip(self):
        est = InsideOutsideParser(dim=24, loss="softmax", kernel=True)
        params = est.get_params()
        assert params["dim"] == 24
        assert params["loss"] == "softmax"
        rebuilt = InsideOutsideParser(**params)
        assert rebuilt.get_params() == params

    def test_set_params(self):
        est = InsideOutsideParser()
        est.set_params(dim=12, compose="treelstm")
        assert est.dim == 12
        assert est.compose == "treelstm"

    def test_clone(self):
        est = InsideOutsideParser(dim=16, seed=9)
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_unfitted_predict_raises(self):
        with pytest.raises(RuntimeError):
            InsideOutsideParser().predict([["a", "b"]])


class TestValidationHelpers:
    def test_string_sentences_split(self):
        assert check_sentences(["the cat sat"]) == [["the", "cat", "sat"]]

    def test_token_lists_pass_through(self):
        assert check_sentences([["a", "b"]]) == [["a", "b"]]

    def test_rejects_single_string(self):
        with pytest.raises(ValueError):
            check_sentences("the cat sat")

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            check_sentences([[]])
        with pytest.raises(ValueError):
            check_sentences([])


class TestFittedBehaviour:
    def test_predict_returns_valid_trees(self, fitted):
        est, samples = fitted
        sents = [s.tokens for s in samples[:5]]
        trees = est.predict(sents)
        assert len(trees) == 5
        for text, tokens in zip(trees, sents):
            assert parse_sexpr(text).tokens() == tokens

    def test_predict_deterministic(self, fitted):
        est, samples = fitted
        sents = [s.tokens for s in samples[:4]]
        assert est.predict(sents) == est.predict(sents)

    def test_transform_shape(self, fitted):
        est, samples = fitted
        reps = est.transform([s.tokens for s in samples[:6]])
        assert reps.shape == (6, 2 * est.dim)
        # inside half is a unit vector, outside half too
        assert np.allclose(np.linalg.norm(reps[:, : est.dim], axis=1), 1.0, atol=1e-6)
        assert np.allclose(np.linalg.norm(reps[:, est.dim :], axis=1), 1.0, atol=1e-6)

    def test_span_embeddings_cover_all_spans(self, fitted):
        est, samples = fitted
        tokens = samples[0].tokens
        spans = est.span_embeddings(tokens)
        T = len(tokens)
        assert len(spans) == T * (T + 1) // 2
        assert all(v.shape == (2 * est.dim,) for v in spans.values())

    def test_score_against_gold(self, fitted):
        est, samples = fitted
        sents = [s.tokens for s in samples[:10]]
        golds = [s.tree for s in samples[:10]]
        value = est.score(sents, golds)
        assert 0.0 <= value <= 1.0

    def test_checkpoint_round_trip_through_load(self, fitted, tmp_path):
        est, samples = fitted
        path = tmp_path / "model.ckpt"
        est.checkpoint_.save(str(path))
        other = InsideOutsideParser().load(str(path))
        sents = [s.tokens for s in samples[:3]]
        assert other.predict(sents) == est.predict(sents)

    def test_attach_punct_flag(self, fitted, tmp_path):
        est, samples = fitted
        path = tmp_path / "model.ckpt"
        est.checkpoint_.save(str(path))
        with_pp = InsideOutsideParser(attach_punct=True).load(str(path))
        tree = with_pp.predict_trees([["d00", "na01", "vi02", "."]])[0]
        assert tree.children[1].token == "."

    def test_fit_with_validation_gold(self):
        grammar = SynthGrammar(seed=6)
        samples = grammar.generate(24)
        est = InsideOutsideParser(
            dim=6, steps=4, batch_size=6, negatives=6, seed=1, val_every=2
        )
        est.fit([s.tokens for s in samples], y=[s.tree for s in samples])
        assert not np.isnan(est.checkpoint_.best_f1)
