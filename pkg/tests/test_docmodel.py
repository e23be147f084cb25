"""Document-model checks against step-by-step recurrence and attention oracles."""

import numpy as np
import pytest

from hierdoc import autograd as ag
from hierdoc.docmodel import (
    DocModelConfig,
    SegmentSequence,
    aggregate_average,
    aggregate_most_frequent,
    init_docmodel_params,
    predict_documents,
    robert_forward,
    tobert_forward,
    train_document_model,
)
from hierdoc.training import OptimizerSettings, evaluate_accuracy

from oracles import encoder_layer_ref, lstm_step_ref, softmax_ref

RNG = np.random.default_rng(11)


def head_ref(params, h):
    hidden = np.maximum(h @ params["head_w1"].data + params["head_b1"].data, 0.0)
    return softmax_ref(hidden @ params["head_w2"].data + params["head_b2"].data)


def robert_ref(params, config, features):
    u = config.lstm_dim
    h = np.zeros(u)
    c = np.zeros(u)
    for row in features:
        h, c = lstm_step_ref(
            row, h, c, params["lstm_wx"].data, params["lstm_wh"].data, params["lstm_b"].data
        )
    return head_ref(params, h)


def make_robert(input_dim=6, lstm_dim=5, num_classes=3, seed=0):
    config = DocModelConfig(kind="robert", input_dim=input_dim, lstm_dim=lstm_dim, num_classes=num_classes)
    params = init_docmodel_params(config, np.random.default_rng(seed), dtype=np.float64)
    return config, params


def make_tobert(input_dim=6, dim=8, heads=2, num_classes=3, seed=0, positions=True, dropout=0.0):
    config = DocModelConfig(
        kind="tobert",
        input_dim=input_dim,
        tobert_dim=dim,
        tobert_heads=heads,
        tobert_ff=2 * dim,
        num_classes=num_classes,
        use_position_embeddings=positions,
        max_segments=16,
        dropout=dropout,
    )
    params = init_docmodel_params(config, np.random.default_rng(seed), dtype=np.float64)
    return config, params


class TestRobertForward:
    def test_posterior_shape_and_simplex(self):
        config, params = make_robert()
        out = robert_forward(RNG.normal(size=(4, 6)), params, config)
        assert out.shape == (3,)
        assert abs(out.sum() - 1.0) < 1e-6 and np.all(out > 0)

    def test_single_segment_matches_one_cell_step(self):
        config, params = make_robert(seed=3)
        features = RNG.normal(size=(1, 6))
        out = robert_forward(features, params, config)
        np.testing.assert_allclose(out, robert_ref(params, config, features), atol=1e-8)

    def test_three_segments_match_iterated_cell(self):
        config, params = make_robert(seed=4)
        features = RNG.normal(size=(3, 6))
        out = robert_forward(features, params, config)
        np.testing.assert_allclose(out, robert_ref(params, config, features), atol=1e-8)

    def test_matches_recurrence_oracle_up_to_length_five(self):
        for trial in range(25):
            rng = np.random.default_rng(100 + trial)
            config, params = make_robert(seed=trial)
            features = rng.normal(size=(1 + trial % 5, 6))
            out = robert_forward(features, params, config)
            np.testing.assert_allclose(out, robert_ref(params, config, features), atol=1e-8)

    def test_empty_sequence_rejected(self):
        config, params = make_robert()
        with pytest.raises(ValueError):
            robert_forward(np.zeros((0, 6)), params, config)

    def test_width_mismatch_rejected(self):
        config, params = make_robert()
        with pytest.raises(ValueError):
            robert_forward(RNG.normal(size=(2, 7)), params, config)

    def test_zeroed_final_layer_gives_uniform_posterior(self):
        config, params = make_robert()
        params["head_w2"].data[:] = 0.0
        params["head_b2"].data[:] = 0.0
        out = robert_forward(RNG.normal(size=(3, 6)), params, config)
        np.testing.assert_array_equal(out, np.full(3, 1 / 3))


class TestTobertForward:
    def test_posterior_shape_and_simplex(self):
        config, params = make_tobert()
        out = tobert_forward(RNG.normal(size=(5, 6)), params, config)
        assert out.shape == (3,)
        assert abs(out.sum() - 1.0) < 1e-6

    def test_permutation_invariant_without_positions(self):
        config, params = make_tobert(positions=False)
        features = RNG.normal(size=(7, 6))
        base = tobert_forward(features, params, config)
        for trial in range(20):
            perm = np.random.default_rng(trial).permutation(7)
            out = tobert_forward(features[perm], params, config)
            np.testing.assert_allclose(out, base, atol=1e-5)

    def test_position_embeddings_break_a_constructed_swap(self):
        # One concrete witness: nontrivial weights, a clearly nonzero
        # positional table, and two unequal segments traded between slots
        # 0 and 2. Mean pooling cancels the swap in the purely linear part,
        # so the difference must come through attention and the FFN.
        config, params = make_tobert(positions=True, seed=9)
        rng = np.random.default_rng(21)
        for name, tensor in params.items():
            if not name.endswith(("ln1_g", "ln1_b", "ln2_g", "ln2_b")):
                tensor.data = rng.normal(0.0, 0.4, size=tensor.shape)
        features = np.zeros((4, 6))
        features[0, 0] = 3.0
        features[2, 1] = -2.0
        swapped = features[[2, 1, 0, 3]]
        a = tobert_forward(features, params, config)
        b = tobert_forward(swapped, params, config)
        assert np.max(np.abs(a - b)) > 1e-4

    def test_single_segment_matches_small_instance_oracle(self):
        config, params = make_tobert(positions=False, seed=5)
        features = RNG.normal(size=(1, 6))
        x = features @ params["in_w"].data + params["in_b"].data
        for i in range(2):
            layer = {
                name.split(".")[1]: params[name].data
                for name in params
                if name.startswith(f"t{i}.")
            }
            x = encoder_layer_ref(x, layer, heads=config.tobert_heads)
        expected = head_ref(params, x.mean(axis=0))
        out = tobert_forward(features, params, config)
        np.testing.assert_allclose(out, expected, atol=1e-8)

    def test_segment_count_above_positional_table_rejected(self):
        config, params = make_tobert(positions=True)
        with pytest.raises(ValueError, match="positional table"):
            tobert_forward(RNG.normal(size=(17, 6)), params, config)

    def test_first_position_pooling_flag(self):
        config, params = make_tobert(positions=False)
        config.pool = "first"
        features = RNG.normal(size=(3, 6))
        out = tobert_forward(features, params, config)
        assert abs(out.sum() - 1.0) < 1e-6

    def test_zeroed_final_layer_gives_uniform_posterior(self):
        config, params = make_tobert()
        params["head_w2"].data[:] = 0.0
        params["head_b2"].data[:] = 0.0
        out = tobert_forward(RNG.normal(size=(3, 6)), params, config)
        np.testing.assert_array_equal(out, np.full(3, 1 / 3))


class TestVotingBaselines:
    def test_average_two_rows(self):
        assert aggregate_average(np.array([[0.6, 0.4], [0.2, 0.8]])) == 1

    def test_average_single_row(self):
        assert aggregate_average(np.array([[0.3, 0.1, 0.6]])) == 2

    def test_average_matches_brute_force_on_random_rows(self):
        rows = RNG.dirichlet(np.ones(4), size=100)
        mean = sum(rows[i] for i in range(100)) / 100.0
        assert aggregate_average(rows) == int(np.argmax(mean))

    def test_most_frequent_modal_class(self):
        rows = np.zeros((3, 6))
        rows[0, 2] = rows[1, 2] = rows[2, 5] = 1.0
        assert aggregate_most_frequent(rows) == 2

    def test_most_frequent_tie_breaks_low(self):
        rows = np.zeros((2, 3))
        rows[0, 1] = 1.0
        rows[1, 2] = 1.0
        assert aggregate_most_frequent(rows) == 1

    def test_most_frequent_matches_counting_oracle(self):
        rows = RNG.dirichlet(np.ones(5), size=100)
        votes = [int(np.argmax(r)) for r in rows]
        counts = [votes.count(c) for c in range(5)]
        assert aggregate_most_frequent(rows) == counts.index(max(counts))

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            aggregate_average(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            aggregate_most_frequent(np.zeros((0, 3)))

    def test_exact_permutation_invariance(self):
        rows = RNG.dirichlet(np.ones(3), size=20)
        perm = RNG.permutation(20)
        assert aggregate_average(rows) == aggregate_average(rows[perm])
        assert aggregate_most_frequent(rows) == aggregate_most_frequent(rows[perm])

    def test_duplicating_all_rows_is_a_no_op(self):
        rows = RNG.dirichlet(np.ones(4), size=9)
        doubled = np.concatenate([rows, rows])
        assert aggregate_average(rows) == aggregate_average(doubled)
        assert aggregate_most_frequent(rows) == aggregate_most_frequent(doubled)


def argmax_of_mean_task(num_docs, width, num_classes, seed, margin=0.5):
    """Sequences labeled by the argmax of the mean row's leading columns.

    Samples whose winning column beats the runner-up by less than ``margin``
    are redrawn so the decision boundary is learnable from a few hundred
    examples.
    """
    rng = np.random.default_rng(seed)
    seqs = []
    for i in range(num_docs):
        while True:
            t = rng.integers(2, 6)
            feats = rng.normal(size=(t, width)).astype(np.float32)
            scores = np.sort(feats.mean(axis=0)[:num_classes])
            if scores[-1] - scores[-2] >= margin:
                break
        label = int(feats.mean(axis=0)[:num_classes].argmax())
        seqs.append(SegmentSequence(doc_id=f"d{i}", features=feats, label=label))
    return seqs


class TestTraining:
    @pytest.mark.parametrize("kind", ["robert", "tobert"])
    def test_learns_argmax_of_mean_task(self, kind):
        train = argmax_of_mean_task(400, 8, 3, seed=1)
        valid = argmax_of_mean_task(120, 8, 3, seed=2)
        if kind == "robert":
            config = DocModelConfig(kind=kind, input_dim=8, num_classes=3, lstm_dim=24)
        else:
            config = DocModelConfig(
                kind=kind,
                input_dim=8,
                num_classes=3,
                tobert_dim=16,
                tobert_heads=2,
                tobert_ff=32,
                max_segments=8,
                use_position_embeddings=False,
                dropout=0.0,
            )
        result = train_document_model(
            train,
            valid,
            config,
            OptimizerSettings(kind="adam", lr=5e-3),
            epochs=20,
            batch_size=32,
            seed=0,
        )
        assert result.best_valid_accuracy >= 0.99

    def test_zero_epochs_returns_initialization_and_untrained_score(self):
        train = argmax_of_mean_task(20, 4, 2, seed=3)
        config = DocModelConfig(kind="robert", input_dim=4, num_classes=2, lstm_dim=8)
        init_ref = init_docmodel_params(config, np.random.default_rng(0))
        result = train_document_model(
            train, train, config, OptimizerSettings(), epochs=0, batch_size=8, seed=0
        )
        assert len(result.metrics) == 1 and result.metrics[0]["epoch"] == 0
        for name, tensor in result.params.items():
            np.testing.assert_array_equal(tensor.data, init_ref[name].data)

    def test_null_task_stays_near_chance(self):
        # Random features with shuffled labels: nothing to learn.
        rng = np.random.default_rng(5)
        num_classes = 4
        seqs = [
            SegmentSequence(
                doc_id=f"d{i}",
                features=rng.normal(size=(3, 6)).astype(np.float32),
                label=int(rng.integers(num_classes)),
            )
            for i in range(300)
        ]
        config = DocModelConfig(kind="robert", input_dim=6, num_classes=num_classes, lstm_dim=12)
        result = train_document_model(
            seqs[:200], seqs[200:], config, OptimizerSettings(lr=1e-3), epochs=5, batch_size=32, seed=0
        )
        preds = predict_documents(result.params, config, seqs[200:])
        acc = evaluate_accuracy(preds, [s.label for s in seqs[200:]])
        assert abs(acc - 1.0 / num_classes) <= 0.10

    def test_width_mismatch_rejected(self):
        seqs = argmax_of_mean_task(10, 4, 2, seed=0)
        config = DocModelConfig(kind="robert", input_dim=5, num_classes=2)
        with pytest.raises(ValueError, match="width"):
            train_document_model(seqs, [], config, OptimizerSettings(), epochs=1)

    def test_empty_split_rejected(self):
        config = DocModelConfig(kind="robert", input_dim=4, num_classes=2)
        with pytest.raises(ValueError):
            train_document_model([], [], config, OptimizerSettings(), epochs=1)
