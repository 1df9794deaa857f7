"""Fine-tuning loop: capacity, initialization contracts, metrics logging."""

import numpy as np
import pytest

from speechlab.audio import logmel, synth_utterance
from speechlab.checkpoint import save_checkpoint
from speechlab.conformer import ConformerConfig
from speechlab.optim import LrSchedule
from speechlab.pretrain import init_pretrain_params
from speechlab.supervised import (LabeledExample, TrainSettings, dev_wer,
                                  eval_params, init_asr_model, load_encoder_weights,
                                  load_examples, train_supervised)
from speechlab.tokens import default_vocabulary

VOCAB = default_vocabulary()
SMALL = ConformerConfig(num_layers=2, model_dim=32, attention_heads=4, dropout=0.0)


def _examples(texts, noise=0.05):
    out = []
    for i, text in enumerate(texts):
        wav = synth_utterance(text, i, noise)
        out.append(LabeledExample(utterance_id=f"u{i}", spec=logmel(wav),
                                  target=VOCAB.encode(text), transcript=text))
    return out


@pytest.fixture(scope="module")
def overfit_run():
    examples = _examples(["ab", "cd ab", "bad", "cab", "dab ad", "bb", "ca da", "abc"])
    model = init_asr_model(SMALL, seed=0)
    settings = TrainSettings(steps=260, batch_size=8,
                             encoder_lr=LrSchedule(2e-3, 30),
                             decoder_lr=LrSchedule(4e-3, 15),
                             ema_decay=0.95, eval_every=0, augment=None)
    metrics = []
    model, ema, _ = train_supervised(model, examples, settings, seed=1,
                                     dev_examples=examples,
                                     on_metric=lambda s, st, v: metrics.append((s, st, v)))
    return model, ema, examples, metrics


def test_overfit_reaches_zero_training_wer(overfit_run):
    # capacity check: the 2,000-step budget is ample, convergence is earlier
    model, ema, examples, _ = overfit_run
    assert dev_wer(eval_params(model, ema), examples) == 0.0


def test_metrics_log_contract(overfit_run):
    _, _, _, metrics = overfit_run
    loss_steps = [st for s, st, _ in metrics if s == "train_loss"]
    assert loss_steps == sorted(loss_steps) and len(set(loss_steps)) == len(loss_steps)
    assert len(loss_steps) == 260
    wer_points = [(st, v) for s, st, v in metrics if s == "dev_wer"]
    assert wer_points and wer_points[-1][0] == 259


def test_training_is_deterministic():
    examples = _examples(["ab", "ba"])
    settings = TrainSettings(steps=6, batch_size=2,
                             encoder_lr=LrSchedule(1e-3, 5), decoder_lr=LrSchedule(1e-3, 5),
                             ema_decay=0.9)
    runs = []
    for _ in range(2):
        model = init_asr_model(SMALL, seed=3)
        losses = []
        train_supervised(model, examples, settings, seed=4,
                         on_metric=lambda s, st, v: losses.append(v))
        runs.append((losses, {k: p.data.copy() for k, p in model.params.items()}))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        np.testing.assert_array_equal(runs[0][1][k], runs[1][1][k])


def test_mismatched_pretrained_checkpoint_fails_before_training(tmp_path):
    wide = ConformerConfig(num_layers=2, model_dim=64, attention_heads=4, dropout=0.0)
    params = init_pretrain_params(wide, np.random.default_rng(0))
    path = tmp_path / "wide.ckpt"
    save_checkpoint(path, params, {"kind": "pretrain", "model": wide.to_dict()})
    model = init_asr_model(SMALL, seed=0)
    with pytest.raises(ValueError, match="model_dim"):
        load_encoder_weights(model, path)


def test_checkpoint_without_metadata_still_validates_shapes(tmp_path):
    params = init_pretrain_params(SMALL, np.random.default_rng(0))
    path = tmp_path / "enc.ckpt"
    save_checkpoint(path, params, {})
    model = init_asr_model(SMALL, seed=0)
    before = model.params["head.w"].data.copy()
    enc_before = model.params["encoder.proj.w"].data.copy()
    load_encoder_weights(model, path)
    np.testing.assert_array_equal(model.params["head.w"].data, before)
    assert not np.array_equal(model.params["encoder.proj.w"].data, enc_before)


def test_load_examples_requires_transcripts(tiny_corpus):
    with pytest.raises(ValueError, match="transcript"):
        load_examples(tiny_corpus["manifests"]["unlabeled"], tiny_corpus["root"])


def test_empty_training_set_rejected():
    model = init_asr_model(SMALL, seed=0)
    with pytest.raises(ValueError, match="training"):
        train_supervised(model, [], TrainSettings(steps=1), seed=0)


def test_checkpoint_carries_optimizer_and_ema_state(tmp_path):
    from speechlab.checkpoint import load_checkpoint
    from speechlab.supervised import save_model
    examples = _examples(["ab", "ba"])
    model = init_asr_model(SMALL, seed=3)
    settings = TrainSettings(steps=4, batch_size=2, ema_decay=0.9, augment=None,
                             encoder_lr=LrSchedule(1e-3, 4),
                             decoder_lr=LrSchedule(1e-3, 4))
    state = {}
    model, ema, _ = train_supervised(model, examples, settings, seed=4,
                                     state_out=state)
    path = tmp_path / "full.ckpt"
    save_model(model, path, step=4, optimizers=state, ema=ema)
    tensors, meta = load_checkpoint(path)
    assert meta["optimizers"]["encoder"]["step"] == 4
    assert meta["optimizers"]["decoder"]["beta2"] == 0.999
    assert meta["ema_decay"] == 0.9
    some_param = "encoder.proj.w"
    np.testing.assert_allclose(tensors[f"adam_m/encoder/{some_param}"],
                               state["encoder"].first_moment[some_param].astype(np.float32))
    np.testing.assert_allclose(tensors[f"ema/{some_param}"],
                               ema.shadow[some_param].astype(np.float32))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_training_loss_aborts():
    examples = _examples(["ab"])
    model = init_asr_model(SMALL, seed=0)
    model.params["head.w"].data[:] = np.nan
    settings = TrainSettings(steps=1, batch_size=1, ema_decay=0.9, augment=None)
    # NaN logits make every alignment unusable, and the loop stops loudly
    with pytest.raises(RuntimeError, match="finite|feasible"):
        train_supervised(model, examples, settings, seed=0)
