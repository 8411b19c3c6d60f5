from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_metrics, brute_force_report
from terec.corpus import InteractionSet
from terec.errors import ConfigError, NonFiniteError, SamplingError
from terec.numkit import SeededRng
from terec.pvec import PretrainedMatrix
from terec.trainkit import (TrainConfig, build_candidate_sets, build_model, candidate_metrics,
                            dropout_sweep, evaluate, fit_and_evaluate, report_from_scores, train)

FAST = dict(epochs=5, batch_size=32, dim=16, word_dim=16, n_filters=16)


def random_matrix(iset, dim=8, seed=0):
    gen = np.random.default_rng(seed)
    return PretrainedMatrix(list(iset.items), gen.normal(size=(iset.n_items, dim)).astype(np.float32))


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(encoder="rnn"), dict(mode="joint"), dict(batch_size=0),
                                     dict(dropout_item=1.5), dict(learning_rate=-1.0),
                                     dict(encoder="cnn", n_filters=10, dim=20)])
    def test_rejected(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)

    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.dim, c.n_filters, c.filter_size) == (0.001, 50, 50, 3)


class TestCandidateSets:
    def pool_iset(self, n_test=11, extra_pos=()):
        catalog = [f"i{k:02d}" for k in range(n_test + 3)]
        test = catalog[3:]
        pairs = [("u", catalog[0]), ("u", test[0]), ("v", catalog[1]), ("v", test[1])]
        pairs += [("u", it) for it in extra_pos]
        return InteractionSet.build(pairs, catalog, test)

    def test_forced_negatives(self):
        iset = InteractionSet.build([("u", "a"), ("u", "t00")], ["a"] + [f"t{k:02d}" for k in range(11)],
                                    [f"t{k:02d}" for k in range(11)])
        c = build_candidate_sets(iset, SeededRng(0))
        assert len(c) == 1
        pos = c.items[0, 0]
        assert sorted(c.items[0, 1:].tolist()) == sorted(set(iset.test_items.tolist()) - {pos})

    def test_exclusion_rules(self):
        iset = self.pool_iset(20, extra_pos=("i05", "i06"))
        c = build_candidate_sets(iset, SeededRng(1))
        test_pos = iset.user_positives("test")
        assert len(c) == len(iset.test_pairs)
        for u, row in zip(c.users, c.items):
            assert row[0] not in row[1:]
            assert not set(row[1:].tolist()) & test_pos[u]
            assert len(set(row[1:].tolist())) == 10

    def test_deterministic(self):
        iset = self.pool_iset(20)
        a, b = build_candidate_sets(iset, SeededRng(3)), build_candidate_sets(iset, SeededRng(3))
        np.testing.assert_array_equal(a.items, b.items)

    def test_pool_too_small(self):
        with pytest.raises(SamplingError):
            build_candidate_sets(self.pool_iset(10), SeededRng(0))


def one_set(pos_score, neg_scores, pos_id=0):
    neg_ids = [k for k in range(1, 12) if k != pos_id][:len(neg_scores)]
    return np.array([[pos_score, *neg_scores]]), np.array([[pos_id, *neg_ids]])


class TestMetrics:
    def test_perfect(self):
        ap, auc = candidate_metrics(*one_set(1.0, [0.0] * 10))
        assert (ap[0], auc[0]) == (1.0, 1.0)

    def test_worst(self):
        ap, auc = candidate_metrics(*one_set(-1.0, [0.0] * 10))
        assert (ap[0], auc[0]) == (1 / 11, 0.0)

    def test_beats_seven(self):
        ap, auc = candidate_metrics(*one_set(0.5, [1.0, 2.0, 3.0] + [0.0] * 7))
        assert auc[0] == 0.7 and ap[0] == 0.25

    def test_tie_breaks_by_item_id(self):
        scores = np.array([[1.0, 1.0, 0.0]])
        ap_first, auc = candidate_metrics(scores, np.array([[2, 5, 9]]))
        ap_second, _ = candidate_metrics(scores, np.array([[7, 5, 9]]))
        assert ap_first[0] == 1.0 and ap_second[0] == 0.5 and auc[0] == 0.75

    @given(st.lists(st.tuples(st.integers(0, 3), st.lists(st.integers(-3, 3), min_size=11,
                                                         max_size=11)), min_size=1, max_size=15),
           st.randoms())
    @settings(max_examples=60, deadline=None)
    def test_report_equals_oracle(self, sets, rnd):
        users = np.array([u for u, _ in sets])
        scores = np.array([s for _, s in sets], dtype=float)
        items = np.array([rnd.sample(range(40), 11) for _ in sets])
        rep = report_from_scores(users, scores, items)
        assert (rep.map, rep.auc) == brute_force_report(users, scores, items)
        for u in set(users.tolist()):
            assert 0.0 <= rep.per_user_auc[u] <= 1.0

    def test_set_metrics_equal_oracle(self):
        gen = np.random.default_rng(0)
        scores = gen.integers(0, 4, size=(200, 11)).astype(float)
        items = np.array([gen.permutation(30)[:11] for _ in range(200)])
        ap, auc = candidate_metrics(scores, items)
        for k in range(200):
            assert (ap[k], auc[k]) == brute_force_metrics(scores[k, 0], items[k, 0],
                                                          list(scores[k, 1:]), list(items[k, 1:]))


class TestTrain:
    def test_loss_falls(self, planted):
        _, iset, vocab, tokens = planted
        cfg = TrainConfig(**FAST)
        model = build_model(cfg, iset, tokens, len(vocab))
        trace = train(model, iset, cfg, SeededRng(0).child("train")).epoch_loss
        assert trace[4] < trace[0]

    def test_deterministic(self, small_planted):
        _, iset, vocab, tokens = small_planted
        cfg = TrainConfig(**FAST)
        runs = []
        for _ in range(2):
            model = build_model(cfg, iset, tokens, len(vocab))
            train(model, iset, cfg, SeededRng(0).child("train"))
            runs.append({k: v.tobytes() for k, v in model.trainable().items()})
        assert runs[0] == runs[1]

    def test_zero_learning_rate(self, small_planted):
        _, iset, vocab, tokens = small_planted
        cfg = TrainConfig(**{**FAST, "learning_rate": 0.0, "epochs": 4})
        model = build_model(cfg, iset, tokens, len(vocab))
        before = {k: v.copy() for k, v in model.trainable().items()}
        trace = train(model, iset, cfg, SeededRng(0)).epoch_loss
        for k, v in model.trainable().items():
            assert v.tobytes() == before[k].tobytes()
        # triplets and dropout masks still vary between epochs, so the trace only
        # stays flat up to sampling noise
        assert max(trace) - min(trace) < 0.05 * np.mean(trace)

    def test_non_finite_aborts_with_location(self, small_planted):
        _, iset, vocab, tokens = small_planted
        cfg = TrainConfig(**FAST)
        model = build_model(cfg, iset, tokens, len(vocab))
        model.joint.user_emb[:] = np.inf
        with pytest.raises(NonFiniteError, match="epoch 1, batch 1"):
            train(model, iset, cfg)

    def test_training_never_samples_test_items(self, small_planted):
        _, iset, vocab, tokens = small_planted
        cfg = TrainConfig(**FAST)
        seen: set[int] = set()

        def record(epoch, batch, users, pos, neg):
            seen.update(pos.tolist())
            seen.update(neg.tolist())
        train(build_model(cfg, iset, tokens, len(vocab)), iset, cfg, on_batch=record)
        assert seen and not seen & set(iset.test_items.tolist())

    def test_test_rows_do_not_affect_training(self, small_planted):
        data, iset, vocab, tokens = small_planted
        test = set(data.test_items)
        ablated = InteractionSet.build([p for p in data.interactions if p[1] not in test],
                                       data.texts, data.test_items)
        assert ablated.items == iset.items and ablated.users == iset.users
        cfg = TrainConfig(**FAST)
        out = []
        for s in (iset, ablated):
            model = build_model(cfg, s, tokens, len(vocab))
            res = train(model, s, cfg, SeededRng(0).child("train"))
            out.append((res.epoch_loss, {k: v.tobytes() for k, v in model.trainable().items()}))
        assert out[0] == out[1]

    def test_pretrained_matrix_unchanged(self, small_planted):
        _, iset, vocab, tokens = small_planted
        pre = random_matrix(iset)
        before = pre.matrix.tobytes()
        cfg = TrainConfig(**FAST, mode="ter+")
        model = build_model(cfg, iset, tokens, len(vocab), pre)
        train(model, iset, cfg)
        assert pre.matrix.tobytes() == before
        assert model.pretrained.tobytes() == before


class TestRuns:
    def test_fit_and_evaluate_cnn(self, small_planted):
        _, iset, vocab, tokens = small_planted
        run = fit_and_evaluate(TrainConfig(**{**FAST, "encoder": "cnn", "epochs": 10}),
                               iset, tokens, len(vocab))
        assert 0.0 <= run.report.map <= 1.0
        assert run.report.n_candidate_sets == len(iset.test_pairs)
        assert run.report.auc > 0.6

    def test_evaluate_is_pure(self, small_planted):
        _, iset, vocab, tokens = small_planted
        run = fit_and_evaluate(TrainConfig(**FAST), iset, tokens, len(vocab))
        cands = build_candidate_sets(iset, SeededRng(0).child("candidates"))
        again = evaluate(run.model, cands)
        assert (again.map, again.auc) == (run.report.map, run.report.auc)

    def test_sweep_shape(self, small_planted):
        _, iset, vocab, tokens = small_planted
        cfg = TrainConfig(**{**FAST, "epochs": 2}, mode="ter+")
        rows = dropout_sweep(cfg, iset, tokens, len(vocab), random_matrix(iset), [0.0, 0.5, 1.0])
        assert [r for r, _ in rows] == [0.0, 0.5, 1.0]

    def test_sweep_needs_ter_plus(self, small_planted):
        _, iset, vocab, tokens = small_planted
        with pytest.raises(ConfigError):
            dropout_sweep(TrainConfig(**FAST), iset, tokens, len(vocab), random_matrix(iset), [0.0])

    def test_ter_plus_needs_matrix(self, small_planted):
        _, iset, vocab, tokens = small_planted
        with pytest.raises(ConfigError):
            build_model(replace(TrainConfig(**FAST), mode="ter+"), iset, tokens, len(vocab))
