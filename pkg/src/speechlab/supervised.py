"""CTC fine-tuning: model bundle, two-optimizer training loop, evaluation."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .audio import Spectrogram, logmel, read_wav
from .augment import AugmentPolicy, apply_specaugment
from .checkpoint import load_checkpoint, save_checkpoint
from .conformer import ConformerConfig, encode, init_encoder_params, subsample
from .ctc import ctc_loss, greedy_decode, wer
from .manifest import Manifest
from .optim import (LrSchedule, adam_step, ema_update, init_adam, init_ema, lr_at)
from .seeding import derive_rng, stable_seed
from .tensor import Tensor
from .tokens import Vocabulary, default_vocabulary


@dataclass
class AsrModel:
    """Encoder plus CTC vocabulary projection, with named parameters
    split into the encoder.* and head.* optimizer groups."""

    cfg: ConformerConfig
    params: dict[str, Tensor]
    vocab: Vocabulary = field(default_factory=default_vocabulary)

    def encoder_params(self) -> dict[str, Tensor]:
        return {k.removeprefix("encoder."): v for k, v in self.params.items()
                if k.startswith("encoder.")}

    def head_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("head.")}

    def logits(self, spec, rng: np.random.Generator | None = None) -> Tensor:
        enc = self.encoder_params()
        feats = subsample(spec, enc, self.cfg)
        acts = encode(feats, self.cfg, enc, rng=rng)
        return T.add(T.matmul(acts.final, self.params["head.w"]), self.params["head.b"])

    def activations(self, spec):
        enc = self.encoder_params()
        return encode(subsample(spec, enc, self.cfg), self.cfg, enc)

    def with_params(self, params: dict[str, Tensor]) -> "AsrModel":
        return AsrModel(cfg=self.cfg, params=params, vocab=self.vocab)


def init_asr_model(cfg: ConformerConfig, seed: int,
                   vocab: Vocabulary | None = None) -> AsrModel:
    vocab = vocab or default_vocabulary()
    rng = derive_rng("asr-init", seed)
    params = {f"encoder.{k}": v for k, v in init_encoder_params(cfg, rng).items()}
    d = cfg.model_dim
    params["head.w"] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, len(vocab))),
                              requires_grad=True)
    params["head.b"] = Tensor(np.zeros(len(vocab)), requires_grad=True)
    return AsrModel(cfg=cfg, params=params, vocab=vocab)


def load_encoder_weights(model: AsrModel, checkpoint_path) -> None:
    """Overwrite encoder.* weights from a checkpoint; the head stays as
    initialized. Architecture mismatches fail before any training step."""
    tensors, meta = load_checkpoint(checkpoint_path)
    stored = meta.get("model")
    if stored is not None:
        current = model.cfg.to_dict()
        for key in ("num_layers", "model_dim", "attention_heads", "conv_kernel_size",
                    "relative_attention", "ff_expansion"):
            if stored.get(key) != current[key]:
                raise ValueError(
                    f"checkpoint architecture mismatch on {key}: "
                    f"checkpoint has {stored.get(key)}, model has {current[key]}")
    for name, p in model.params.items():
        if not name.startswith("encoder."):
            continue
        if name not in tensors:
            raise ValueError(f"checkpoint is missing encoder weight {name}")
        if tuple(tensors[name].shape) != tuple(p.data.shape):
            raise ValueError(f"checkpoint weight {name} has shape {tensors[name].shape}, "
                             f"expected {p.data.shape}")
        p.data = tensors[name].copy()


def load_full_model(model: AsrModel, checkpoint_path) -> None:
    tensors, meta = load_checkpoint(checkpoint_path)
    for name, p in model.params.items():
        if name not in tensors:
            raise ValueError(f"checkpoint is missing weight {name}")
        if tuple(tensors[name].shape) != tuple(p.data.shape):
            raise ValueError(f"checkpoint weight {name} has shape {tensors[name].shape}, "
                             f"expected {p.data.shape}")
        p.data = tensors[name].copy()
    del meta


def save_model(model: AsrModel, path, step: int, extra_meta: dict | None = None,
               optimizers: dict | None = None, ema=None) -> None:
    """Write model weights plus, when given, Adam moments and EMA shadows.

    State tensors live beside the weights under reserved prefixes
    (adam_m/<group>/, adam_v/<group>/, ema/) so one container carries the
    whole training state.
    """
    meta = {"kind": "asr", "model": model.cfg.to_dict(), "vocab_size": len(model.vocab),
            "step": step}
    tensors: dict = dict(model.params)
    if optimizers:
        meta["optimizers"] = {}
        for group, state in optimizers.items():
            meta["optimizers"][group] = {"step": state.step, "beta1": state.beta1,
                                         "beta2": state.beta2, "epsilon": state.epsilon}
            for name, arr in state.first_moment.items():
                tensors[f"adam_m/{group}/{name}"] = arr
            for name, arr in state.second_moment.items():
                tensors[f"adam_v/{group}/{name}"] = arr
    if ema is not None:
        meta["ema_decay"] = ema.decay
        for name, arr in ema.shadow.items():
            tensors[f"ema/{name}"] = arr
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, tensors, meta)


@dataclass
class TrainSettings:
    steps: int
    batch_size: int = 8
    encoder_lr: LrSchedule = field(default_factory=lambda: LrSchedule(peak_lr=1.5e-3, warmup_steps=60))
    decoder_lr: LrSchedule = field(default_factory=lambda: LrSchedule(peak_lr=3e-3, warmup_steps=20))
    # long-horizon default; short desk-scale runs override it (at a few
    # hundred steps a 0.9999 shadow would still sit at the initialization)
    ema_decay: float = 0.9999
    eval_with_ema: bool = True
    eval_every: int = 0  # 0: only final evaluation
    augment: AugmentPolicy | None = field(default_factory=AugmentPolicy)


@dataclass
class LabeledExample:
    utterance_id: str
    spec: Spectrogram
    target: list[int]
    transcript: str


def load_examples(manifest: Manifest, corpus_root,
                  vocab: Vocabulary | None = None) -> list[LabeledExample]:
    """Featurize a labeled manifest once; training re-reads the cache."""
    vocab = vocab or default_vocabulary()
    out = []
    for entry in manifest:
        if not entry.transcript:
            raise ValueError(f"utterance {entry.utterance_id} has no transcript")
        wav = read_wav(os.path.join(corpus_root, entry.audio))
        out.append(LabeledExample(utterance_id=entry.utterance_id, spec=logmel(wav),
                                  target=vocab.encode(entry.transcript),
                                  transcript=entry.transcript))
    return out


def eval_params(model: AsrModel, ema) -> AsrModel:
    if ema is None:
        return model
    return model.with_params(ema.snapshot())


def decode_examples(model: AsrModel, examples: list[LabeledExample]) -> list[str]:
    hyps = []
    with T.no_grad():
        for ex in examples:
            hyps.append(model.vocab.decode(greedy_decode(model.logits(ex.spec))))
    return hyps


def dev_wer(model: AsrModel, examples: list[LabeledExample]) -> float:
    return wer([ex.transcript for ex in examples], decode_examples(model, examples))


def _batches(example_count: int, batch_size: int, steps: int, seed: int):
    order: list[int] = []
    epoch = 0
    for _ in range(steps):
        while len(order) < batch_size:
            order.extend(derive_rng("batch-order", seed, epoch).permutation(example_count))
            epoch += 1
        yield order[:batch_size]
        order = order[batch_size:]


def train_supervised(model: AsrModel, train_examples: list[LabeledExample],
                     settings: TrainSettings, seed: int,
                     dev_examples: list[LabeledExample] | None = None,
                     on_metric=None, state_out: dict | None = None):
    """CTC training with SpecAugment, separate encoder/decoder Adam
    optimizers and an EMA of all weights used for evaluation.

    on_metric(series, step, value) receives the per-step loss and the
    periodic dev WER. state_out, when given, receives the optimizer states
    for checkpoint export. Returns (model, ema, final dev WER or None).
    """
    if not train_examples:
        raise ValueError("no training examples")
    enc_params = {k: v for k, v in model.params.items() if k.startswith("encoder.")}
    head_params = model.head_params()
    enc_opt = init_adam(enc_params)
    head_opt = init_adam(head_params)
    if state_out is not None:
        state_out["encoder"] = enc_opt
        state_out["decoder"] = head_opt
    ema = init_ema(model.params, settings.ema_decay)
    batch_size = min(settings.batch_size, len(train_examples))
    last_dev = None
    for step, batch in enumerate(_batches(len(train_examples), batch_size,
                                          settings.steps, seed)):
        losses = []
        for pos, idx in enumerate(batch):
            ex = train_examples[idx]
            spec = ex.spec
            if settings.augment is not None:
                spec = apply_specaugment(spec, settings.augment,
                                         stable_seed("augment", seed, step, ex.utterance_id))
            rng = derive_rng("dropout", seed, step, pos) if model.cfg.dropout > 0 else None
            result = ctc_loss(model.logits(spec, rng=rng), ex.target)
            if result.feasible:
                losses.append(result.loss)
        if not losses:
            raise RuntimeError(f"no feasible utterance in batch at step {step}")
        total = T.mul(sum(losses[1:], losses[0]), 1.0 / len(losses))
        value = total.item()
        if not np.isfinite(value):
            raise RuntimeError(f"non-finite training loss at step {step}")
        grads = T.gradients(total, model.params)
        adam_step(enc_params, {k: grads[k] for k in enc_params}, enc_opt,
                  lr_at(settings.encoder_lr, step + 1))
        adam_step(head_params, {k: grads[k] for k in head_params}, head_opt,
                  lr_at(settings.decoder_lr, step + 1))
        ema_update(ema, model.params)
        if on_metric is not None:
            on_metric("train_loss", step, value)
        is_last = step == settings.steps - 1
        if dev_examples and (is_last or (settings.eval_every and (step + 1) % settings.eval_every == 0)):
            scoring = eval_params(model, ema) if settings.eval_with_ema else model
            last_dev = dev_wer(scoring, dev_examples)
            if on_metric is not None:
                on_metric("dev_wer", step, last_dev)
    return model, ema, last_dev
