"""Linear probes, best-configuration selection, the MLP head and mAP."""

import itertools

import numpy as np
import pytest

from speechlab.probe import (METHODS, ProbeCell, average_accuracy,
                             average_precision, bce_with_logits, eval_map,
                             init_mlp_head, select_best, train_mlp_head, train_probe)
from util import fd_gradcheck


def _blobs(rng, n=200, d=8, gap=6.0, classes=2, weights=None):
    weights = weights or [1.0 / classes] * classes
    counts = (np.array(weights) * n).astype(int)
    counts[0] += n - counts.sum()
    xs, ys = [], []
    for c, count in enumerate(counts):
        center = np.zeros(d)
        center[c % d] = gap * (1 + c // d)
        xs.append(rng.normal(size=(count, d)) + center)
        ys.append(np.full(count, c))
    x = np.concatenate(xs)
    y = np.concatenate(ys).astype(np.int64)
    order = rng.permutation(len(y))
    return x[order], y[order]


@pytest.mark.parametrize("method", METHODS)
def test_separable_blobs_reach_99_percent(method):
    rng = np.random.default_rng(0)
    x_train, y_train = _blobs(rng, n=200)
    x_test, y_test = _blobs(rng, n=100)
    probe = train_probe(x_train, y_train, method, seed=0)
    assert probe.accuracy(x_test, y_test) >= 0.99


def test_random_labels_sit_at_chance():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 8))
    y = rng.integers(0, 2, size=300)
    x_dev = rng.normal(size=(200, 8))
    y_dev = rng.integers(0, 2, size=200)
    for method in METHODS:
        acc = train_probe(x, y, method, seed=0).accuracy(x_dev, y_dev)
        assert abs(acc - 0.5) <= 0.1


def test_balanced_logistic_recovers_minority_recall():
    rng = np.random.default_rng(2)
    x, y = _blobs(rng, n=400, gap=2.2, weights=[0.9, 0.1])
    x_test, y_test = _blobs(rng, n=300, gap=2.2, weights=[0.5, 0.5])
    probe = train_probe(x, y, "balanced-logistic", seed=0)
    pred = probe.predict(x_test)
    minority = y_test == 1
    assert (pred[minority] == 1).mean() >= 0.95


def test_absent_class_rejected():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(20, 4))
    y = np.array([0, 2] * 10)  # class 1 missing
    with pytest.raises(ValueError, match="absent"):
        train_probe(x, y, "logistic", seed=0)
    with pytest.raises(ValueError, match="two classes"):
        train_probe(x, np.zeros(20, dtype=int), "lda", seed=0)


def test_unknown_method_rejected():
    with pytest.raises(ValueError, match="method"):
        train_probe(np.zeros((4, 2)), np.array([0, 1, 0, 1]), "svm", seed=0)


def test_lda_predictions_invariant_to_feature_scaling():
    rng = np.random.default_rng(4)
    x, y = _blobs(rng, n=120, gap=3.0, classes=3)
    x_test, _ = _blobs(rng, n=60, gap=3.0, classes=3)
    base = train_probe(x, y, "lda", seed=0).predict(x_test)
    scaled = train_probe(x * 10.0, y, "lda", seed=0).predict(x_test * 10.0)
    np.testing.assert_array_equal(base, scaled)


def test_select_best_rules():
    single = [ProbeCell(layer=2, method="lda", dev_accuracy=0.7, test_accuracy=0.6)]
    assert select_best(single) is single[0]
    tie = [ProbeCell(layer=3, method="logistic", dev_accuracy=0.9, test_accuracy=0.8),
           ProbeCell(layer=1, method="lda", dev_accuracy=0.9, test_accuracy=0.7)]
    assert select_best(tie).layer == 1
    method_tie = [ProbeCell(layer=1, method="lda", dev_accuracy=0.9, test_accuracy=0.7),
                  ProbeCell(layer=1, method="logistic", dev_accuracy=0.9, test_accuracy=0.6)]
    assert select_best(method_tie).method == "logistic"
    cells = [ProbeCell(layer=l, method=m, dev_accuracy=0.1 * l + 0.01 * len(m),
                       test_accuracy=0.5) for l in range(3) for m in METHODS]
    best = select_best(cells)
    assert all(best.dev_accuracy >= c.dev_accuracy for c in cells)
    with pytest.raises(ValueError):
        select_best([])


def test_select_best_invariant_under_monotone_rescaling():
    rng = np.random.default_rng(5)
    cells = [ProbeCell(layer=l, method=m, dev_accuracy=float(rng.uniform(0.3, 0.9)),
                       test_accuracy=float(rng.uniform()))
             for l in range(-1, 4) for m in METHODS]
    base = select_best(cells)
    squashed = [ProbeCell(c.layer, c.method, np.tanh(3.0 * c.dev_accuracy),
                          c.test_accuracy) for c in cells]
    chosen = select_best(squashed)
    assert (chosen.layer, chosen.method) == (base.layer, base.method)


def test_average_accuracy_mean_and_errors():
    per_task = {"a": {-1: 0.6, 0: 0.8}, "b": {-1: 0.8, 0: 0.6}}
    curve = average_accuracy(per_task)
    assert curve == {-1: pytest.approx(0.7), 0: pytest.approx(0.7)}
    single = average_accuracy({"only": {-1: 0.4, 0: 0.9}})
    assert single == {-1: 0.4, 0: 0.9}
    permuted = average_accuracy(dict(reversed(list(per_task.items()))))
    assert permuted == curve
    with pytest.raises(ValueError, match="missing"):
        average_accuracy({"a": {-1: 0.5, 0: 0.5}, "b": {-1: 0.5}})
    with pytest.raises(ValueError, match="tasks"):
        average_accuracy({})


def test_mlp_head_overfits_ten_clips():
    rng = np.random.default_rng(6)
    frames = [rng.normal(size=(rng.integers(3, 6), 10)) + c for c, _ in
              zip(itertools.cycle([0, 3]), range(10))]
    targets = np.array([[1.0, 0.0] if i % 2 == 0 else [0.0, 1.0] for i in range(10)])
    head = train_mlp_head(frames, targets, epochs=400, seed=0, hidden=64)
    loss = bce_with_logits(head.frame_logits(np.concatenate(frames)),
                           np.concatenate([np.tile(t, (f.shape[0], 1))
                                           for f, t in zip(frames, targets)]))
    assert loss.item() < 0.01


def test_all_negative_class_probability_trends_low():
    rng = np.random.default_rng(7)
    frames = [rng.normal(size=(4, 6)) for _ in range(8)]
    targets = np.zeros((8, 2))
    targets[:, 0] = rng.integers(0, 2, size=8)
    targets[0, 0] = 1.0  # keep class 0 non-degenerate
    head = train_mlp_head(frames, targets, epochs=300, seed=0, hidden=32)
    probs = [head.clip_scores(f)[1] for f in frames]
    assert max(probs) < 0.1


def test_mlp_head_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    # resample until ReLU pre-activations clear the kink; otherwise central
    # differences straddle the non-differentiable point
    for attempt in range(50):
        head = init_mlp_head(input_dim=5, num_classes=3, seed=attempt, hidden=32)
        frames = rng.normal(size=(6, 5))
        pre = frames @ head.hidden_w.data + head.hidden_b.data
        if np.abs(pre).min() > 2e-3:
            break
    targets = rng.integers(0, 2, size=(6, 3)).astype(float)

    def loss():
        return bce_with_logits(head.frame_logits(frames), targets)

    fd_gradcheck(loss, head.params(), entries_per_tensor=4, seed=0)


def test_mlp_head_requires_classes():
    with pytest.raises(ValueError, match="class"):
        init_mlp_head(4, 0, seed=0)
    with pytest.raises(ValueError, match="C >= 1"):
        train_mlp_head([np.zeros((2, 4))], np.zeros((1, 0)), epochs=1, seed=0)


def test_average_precision_hand_case():
    # single positive ranked 2nd of 4: AP = precision@2 = 1/2
    scores = np.array([0.9, 0.8, 0.3, 0.1])
    positives = np.array([False, True, False, False])
    assert average_precision(scores, positives) == pytest.approx(0.5)


def test_perfect_ranking_gives_map_one():
    head = _passthrough_head(num_classes=2)
    clips = [("a", np.array([[3.0]]), np.array([1, 1])),
             ("b", np.array([[1.0]]), np.array([1, 0])),
             ("c", np.array([[-3.0]]), np.array([0, 0]))]
    # both classes rank all their positives above every negative
    result = eval_map(head, clips)
    assert result.map_value == pytest.approx(1.0)


def _passthrough_head(num_classes):
    """512-unit head wired so every class score is sigmoid(x) for scalar
    input x; clip ranking then mirrors the raw feature ordering."""
    head = init_mlp_head(1, num_classes, seed=0)
    head.hidden_w.data[:] = 1.0
    head.hidden_b.data[:] = 100.0  # keep ReLU active for any test input
    head.out_w.data[:] = 1.0 / 512
    head.out_b.data[:] = -100.0
    return head


def test_map_invariant_under_monotone_score_transforms():
    rng = np.random.default_rng(9)
    scores = rng.normal(size=10)
    positives = rng.integers(0, 2, size=10).astype(bool)
    positives[0] = True
    base = average_precision(scores, positives)
    for transform in (lambda s: 2 * s + 1, np.tanh, lambda s: s ** 3):
        assert average_precision(transform(scores), positives) == pytest.approx(base)


def test_inverted_perfect_ranking_is_minimal_ap():
    for n in range(2, 7):
        for p in range(1, n):
            positives = np.zeros(n, dtype=bool)
            positives[:p] = True
            # a perfect ranker scores positives highest; inverting it ranks
            # them last, which must be the worst over all permutations
            ap_inverted = average_precision(np.arange(n, dtype=float), positives)
            worst = min(average_precision(np.array(perm, dtype=float), positives)
                        for perm in itertools.permutations(range(n)))
            assert ap_inverted == pytest.approx(worst)


def test_eval_map_excludes_positive_free_classes():
    head = _passthrough_head(num_classes=3)
    clips = [("a", np.array([[2.0]]), np.array([1, 0, 0])),
             ("b", np.array([[1.0]]), np.array([0, 1, 0]))]
    result = eval_map(head, clips)
    assert result.excluded_classes == [2]
    assert set(result.per_class) == {0, 1}
    with pytest.raises(ValueError, match="positives"):
        eval_map(head, [("a", np.array([[1.0]]), np.array([0, 0, 0]))])


def test_eval_map_tie_break_is_stable_by_clip_id():
    head = _passthrough_head(num_classes=1)
    # identical scores: order falls back to clip id, so "a" outranks "b"
    clips_pos_a = [("a", np.array([[1.0]]), np.array([1])),
                   ("b", np.array([[1.0]]), np.array([0]))]
    clips_pos_b = [("a", np.array([[1.0]]), np.array([0])),
                   ("b", np.array([[1.0]]), np.array([1]))]
    assert eval_map(head, clips_pos_a).map_value == pytest.approx(1.0)
    assert eval_map(head, clips_pos_b).map_value == pytest.approx(0.5)


def test_extract_pooled_is_time_mean_and_deterministic(tiny_corpus):
    from speechlab.conformer import ConformerConfig
    from speechlab.manifest import Manifest
    from speechlab.probe import extract_pooled
    from speechlab.supervised import init_asr_model
    from speechlab.audio import logmel, read_wav
    import os
    from dataclasses import replace
    cfg = ConformerConfig(num_layers=1, model_dim=16, attention_heads=4, dropout=0.0)
    model = init_asr_model(cfg, seed=0)
    manifest = tiny_corpus["manifests"]["dev"]
    first = manifest.entries[0]
    # same audio listed twice under distinct ids
    duplicated = Manifest((first, replace(first, utterance_id=first.utterance_id + "-dup")))
    pooled = extract_pooled(model, duplicated, layer=0, corpus_root=tiny_corpus["root"])
    np.testing.assert_array_equal(pooled.matrix[0], pooled.matrix[1])
    # mean identity against a direct forward pass
    spec = logmel(read_wav(os.path.join(tiny_corpus["root"], manifest.entries[0].audio)))
    acts = model.activations(spec)
    np.testing.assert_allclose(pooled.matrix[0], acts.layer(0).data.mean(axis=0),
                               atol=1e-12)
    # determinism: the same clip pools to the same vector
    again = extract_pooled(model, duplicated, layer=0, corpus_root=tiny_corpus["root"])
    np.testing.assert_array_equal(pooled.matrix, again.matrix)
    with pytest.raises(ValueError, match="range"):
        extract_pooled(model, duplicated, layer=7, corpus_root=tiny_corpus["root"])
