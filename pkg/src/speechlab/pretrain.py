"""Contrastive pre-training of the encoder on unlabeled audio.

Encoded feature spans are masked and the encoder output at masked
positions is trained to identify the linear projection of the original
(pre-mask) features among distractors drawn from other masked positions
of the same utterance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .conformer import ConformerConfig, encode, init_encoder_params, subsample
from .optim import LrSchedule, OptimizerState, adam_step, ema_update, init_adam, init_ema, lr_at
from .seeding import derive_rng
from .tensor import Tensor

MASK_START_PROB = 0.065
MASK_SPAN = 10


@dataclass(frozen=True)
class MaskSpec:
    span_starts: tuple[int, ...]
    span_length: int
    covered: tuple[int, ...]  # sorted positions
    start_prob: float

    @property
    def covered_set(self) -> frozenset:
        return frozenset(self.covered)


def sample_masks(num_positions: int, start_prob: float = MASK_START_PROB,
                 span_length: int = MASK_SPAN,
                 seed: int | None = None, rng: np.random.Generator | None = None,
                 force_one: bool = True) -> MaskSpec:
    """Choose each position as a span start independently with start_prob.

    Spans run [start, start + span_length) clipped to the sequence. If no
    start is drawn and force_one is set, one start is placed uniformly so
    every utterance contributes a defined loss.
    """
    if num_positions < 1:
        raise ValueError("num_positions must be >= 1")
    if rng is None:
        rng = derive_rng("mask", seed if seed is not None else 0)
    draws = rng.random(num_positions) < start_prob
    starts = list(np.flatnonzero(draws))
    if not starts and force_one:
        starts = [int(rng.integers(num_positions))]
    covered = set()
    for s in starts:
        covered.update(range(s, min(s + span_length, num_positions)))
    return MaskSpec(span_starts=tuple(int(s) for s in starts), span_length=span_length,
                    covered=tuple(sorted(covered)), start_prob=start_prob)


def masked_forward(features: Tensor, mask: MaskSpec, cfg: ConformerConfig,
                   params: dict[str, Tensor], mask_embedding: Tensor,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Replace covered positions with the learned mask embedding, run the
    block stack and return the final-layer vectors at covered positions."""
    num_positions = features.shape[0]
    if mask.covered and max(mask.covered) >= num_positions:
        raise ValueError("mask positions exceed the feature length")
    if mask.covered:
        sel = np.zeros((num_positions, 1), dtype=bool)
        sel[list(mask.covered)] = True
        masked = T.where(sel, T.reshape(mask_embedding, (1, features.shape[1])), features)
    else:
        masked = features
    acts = encode(masked, cfg, params, rng=rng)
    if not mask.covered:
        return acts.final
    return acts.final[np.array(mask.covered)]


@dataclass
class ContrastiveBatch:
    context_vectors: Tensor  # (M, D) encoder outputs at masked positions
    target_vectors: Tensor  # (M, D) projected pre-mask features
    negative_indices: np.ndarray  # (M, K) rows of target_vectors
    temperature: float = 0.1

    def __post_init__(self):
        if self.context_vectors.shape != self.target_vectors.shape:
            raise ValueError("contexts and targets must share shape")
        if self.negative_indices.ndim != 2 or self.negative_indices.shape[0] != self.context_vectors.shape[0]:
            raise ValueError("negative_indices must be (M, K)")
        if self.negative_indices.shape[1] < 1:
            raise ValueError("need at least one negative per anchor")


def _row_normalize(x: Tensor) -> Tensor:
    norms = np.sqrt((x.data * x.data).sum(axis=-1))
    if np.any(norms == 0.0):
        raise ValueError("zero-norm vector: cosine similarity undefined")
    inv = T.power(T.tsum(T.mul(x, x), axis=-1, keepdims=True), -0.5)
    return T.mul(x, inv)


def contrastive_loss(batch: ContrastiveBatch) -> Tensor:
    """Mean InfoNCE over masked positions with cosine similarities.

    Anchor t scores its own target against K negatives drawn from other
    target rows; similarity is divided by the temperature before the
    softmax cross-entropy.
    """
    if not np.all(np.isfinite(batch.context_vectors.data)) or \
            not np.all(np.isfinite(batch.target_vectors.data)):
        raise ValueError("contrastive batch contains non-finite values")
    c = _row_normalize(batch.context_vectors)
    q = _row_normalize(batch.target_vectors)
    m = c.shape[0]
    pos = T.tsum(T.mul(c, q), axis=-1, keepdims=True)  # (M, 1)
    negs = q[batch.negative_indices]  # (M, K, D)
    neg = T.tsum(T.mul(T.reshape(c, (m, 1, c.shape[1])), negs), axis=-1)  # (M, K)
    logits = T.mul(T.concat([pos, neg], axis=1), 1.0 / batch.temperature)
    return T.mul(T.tmean(T.log_softmax(logits, axis=-1)[:, 0]), -1.0)


def sample_negatives(num_anchors: int, num_negatives: int,
                     rng: np.random.Generator) -> np.ndarray:
    """For each anchor pick negatives among the other anchors' targets,
    with replacement when fewer distinct candidates exist."""
    if num_anchors < 2:
        raise ValueError("need at least two masked positions to draw negatives")
    out = np.zeros((num_anchors, num_negatives), dtype=np.int64)
    for i in range(num_anchors):
        pool = np.concatenate([np.arange(i), np.arange(i + 1, num_anchors)])
        replace = pool.size < num_negatives
        out[i] = rng.choice(pool, size=num_negatives, replace=replace)
    return out


@dataclass
class PretrainSettings:
    steps: int
    batch_size: int = 8
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(peak_lr=2e-3, warmup_steps=40))
    start_prob: float = MASK_START_PROB
    span_length: int = MASK_SPAN
    num_negatives: int = 8
    temperature: float = 0.1
    use_ema: bool = True
    ema_decay: float = 0.9999
    stop_target_grad: bool = False


def init_pretrain_params(cfg: ConformerConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d = cfg.model_dim
    params = {f"encoder.{k}": v for k, v in init_encoder_params(cfg, rng).items()}
    params["pretrain.mask_embed"] = Tensor(rng.normal(0.0, 0.1, size=d), requires_grad=True)
    params["pretrain.target.w"] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, d)),
                                         requires_grad=True)
    params["pretrain.target.b"] = Tensor(np.zeros(d), requires_grad=True)
    return params


def encoder_subset(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k.removeprefix("encoder."): v for k, v in params.items()
            if k.startswith("encoder.")}


def pretrain_step(spectrograms, params: dict[str, Tensor], cfg: ConformerConfig,
                  settings: PretrainSettings, opt: OptimizerState, step: int,
                  seed: int, ema=None, dropout_rng=None) -> float:
    """One contrastive update over a batch of spectrograms; returns the loss."""
    if not spectrograms:
        raise ValueError("batch must be non-empty")
    enc = encoder_subset(params)
    losses = []
    for utt_index, spec in enumerate(spectrograms):
        feats = subsample(spec, enc, cfg)
        tp = feats.shape[0]
        mask_rng = derive_rng("pretrain-mask", seed, step, utt_index)
        mask = sample_masks(tp, settings.start_prob, settings.span_length, rng=mask_rng)
        target_in = feats.detach() if settings.stop_target_grad else feats
        targets_all = T.add(T.matmul(target_in, params["pretrain.target.w"]),
                            params["pretrain.target.b"])
        if len(mask.covered) < 2:
            widened = sample_masks(tp, 1.0, settings.span_length, rng=mask_rng)
            mask = widened
        covered = np.array(mask.covered)
        contexts = masked_forward(feats, mask, cfg, enc,
                                  params["pretrain.mask_embed"], rng=dropout_rng)
        neg_rng = derive_rng("pretrain-neg", seed, step, utt_index)
        negatives = sample_negatives(len(covered), settings.num_negatives, neg_rng)
        batch = ContrastiveBatch(context_vectors=contexts,
                                 target_vectors=targets_all[covered],
                                 negative_indices=negatives,
                                 temperature=settings.temperature)
        losses.append(contrastive_loss(batch))
    total = T.mul(sum(losses[1:], losses[0]), 1.0 / len(losses))
    loss_value = total.item()
    if not np.isfinite(loss_value):
        raise RuntimeError(f"non-finite pre-training loss {loss_value} at step {step}")
    grads = T.gradients(total, params)
    adam_step(params, grads, opt, lr_at(settings.schedule, step + 1))
    if ema is not None:
        ema_update(ema, params)
    return loss_value


def run_pretraining(spectrograms: dict[str, np.ndarray], order: list[str],
                    cfg: ConformerConfig, settings: PretrainSettings, seed: int,
                    on_step=None) -> tuple[dict[str, Tensor], object, list[float]]:
    """Full pre-training loop over a cached spectrogram table.

    Returns the trained parameters, the EMA state (or None) and the loss
    history. Batches cycle through per-epoch shuffles derived from seed.
    """
    params = init_pretrain_params(cfg, derive_rng("pretrain-init", seed))
    opt = init_adam(params)
    ema = init_ema(params, settings.ema_decay) if settings.use_ema else None
    losses = []
    ids = list(order)
    cursor, epoch = 0, 0
    shuffled = list(derive_rng("pretrain-order", seed, 0).permutation(ids))
    for step in range(settings.steps):
        batch_ids = []
        while len(batch_ids) < min(settings.batch_size, len(ids)):
            if cursor >= len(shuffled):
                epoch += 1
                shuffled = list(derive_rng("pretrain-order", seed, epoch).permutation(ids))
                cursor = 0
            batch_ids.append(shuffled[cursor])
            cursor += 1
        batch = [spectrograms[i] for i in batch_ids]
        dropout_rng = derive_rng("pretrain-dropout", seed, step) if cfg.dropout > 0 else None
        value = pretrain_step(batch, params, cfg, settings, opt, step, seed,
                              ema=ema, dropout_rng=dropout_rng)
        losses.append(value)
        if on_step is not None:
            on_step(step, value)
    return params, ema, losses
