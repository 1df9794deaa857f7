"""Noisy student training: pseudo-labeling, confidence filtering, batch
mixing and the generation loop."""

from __future__ import annotations

import json
import math
import os
import time
import wave
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .audio import logmel, read_wav
from .augment import apply_specaugment
from .ctc import ctc_loss, greedy_decode
from .manifest import Manifest
from .optim import adam_step, ema_update, init_adam, init_ema, lr_at
from .seeding import derive_rng, stable_seed
from .supervised import (AsrModel, LabeledExample, TrainSettings, dev_wer,
                         eval_params, init_asr_model, load_encoder_weights,
                         load_examples)


@dataclass(frozen=True)
class PseudoLabeledUtterance:
    utterance_id: str
    audio: str
    duration_s: float
    hypothesis: tuple[int, ...]
    transcript: str
    loss_per_word: float


@dataclass(frozen=True)
class NstConfig:
    keep_fraction: float = 0.5
    nst_ratio: float = 0.5
    generations: int = 1

    def __post_init__(self):
        if self.keep_fraction not in (0.5, 1.0):
            raise ValueError("keep_fraction must be 0.5 or 1.0")
        if not 0.0 <= self.nst_ratio <= 1.0:
            raise ValueError("nst_ratio must lie in [0, 1]")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")


def pseudo_label(teacher: AsrModel, unlabeled: Manifest, corpus_root,
                 skip_log: list | None = None) -> list[PseudoLabeledUtterance]:
    """Greedy-decode every utterance (no LM fusion) and score the teacher's
    CTC loss on its own hypothesis per hypothesized word.

    Unreadable audio is skipped and logged rather than failing the run.
    """
    out = []
    with T.no_grad():
        for entry in unlabeled:
            try:
                wav = read_wav(os.path.join(corpus_root, entry.audio))
                spec = logmel(wav)
            except (OSError, ValueError, EOFError, wave.Error) as err:
                if skip_log is not None:
                    skip_log.append({"id": entry.utterance_id, "error": str(err)})
                continue
            logits = teacher.logits(spec)
            hyp = greedy_decode(logits)
            result = ctc_loss(logits, hyp)
            text = teacher.vocab.decode(hyp)
            words = max(1, len(text.split()))
            out.append(PseudoLabeledUtterance(
                utterance_id=entry.utterance_id, audio=entry.audio,
                duration_s=entry.duration_s, hypothesis=tuple(hyp),
                transcript=text, loss_per_word=float(result.loss.item()) / words))
    return out


def filter_by_confidence(items: list[PseudoLabeledUtterance],
                         keep_fraction: float) -> list[PseudoLabeledUtterance]:
    """Keep the ceil(keep_fraction * N) most confident items (lowest loss
    per word), ties broken by utterance id."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    if not items:
        return []
    ranked = sorted(items, key=lambda u: (u.loss_per_word, u.utterance_id))
    keep = math.ceil(keep_fraction * len(items))
    return ranked[:keep]


def write_pseudo_manifest(items: list[PseudoLabeledUtterance], path) -> None:
    """Manifest extension with hypothesis transcript and loss_per_word."""
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        for u in items:
            f.write(json.dumps({"id": u.utterance_id, "audio": u.audio,
                                "transcript": u.transcript,
                                "duration_s": u.duration_s,
                                "loss_per_word": u.loss_per_word}, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_pseudo_manifest(path) -> list[PseudoLabeledUtterance]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            out.append(PseudoLabeledUtterance(
                utterance_id=record["id"], audio=record["audio"],
                duration_s=record["duration_s"], hypothesis=(),
                transcript=record["transcript"],
                loss_per_word=record["loss_per_word"]))
    return out


def mix_batches(labeled: list, pseudo: list, nst_ratio: float, batch_size: int,
                seed: int, num_batches: int):
    """Yield batches of (source, item) with exactly round(ratio*batch_size)
    pseudo items each; both streams reshuffle per epoch and recycle
    independently."""
    if not 0.0 <= nst_ratio <= 1.0:
        raise ValueError("nst_ratio must lie in [0, 1]")
    quota_pseudo = int(math.floor(nst_ratio * batch_size + 0.5))
    quota_labeled = batch_size - quota_pseudo
    if quota_pseudo > 0 and not pseudo:
        raise ValueError("pseudo stream is empty but its batch quota is positive")
    if quota_labeled > 0 and not labeled:
        raise ValueError("labeled stream is empty but its batch quota is positive")

    def stream(items, name):
        epoch = 0
        while True:
            order = derive_rng("mix", seed, name, epoch).permutation(len(items))
            for i in order:
                yield items[int(i)]
            epoch += 1

    lab_stream = stream(labeled, "labeled") if quota_labeled else None
    pse_stream = stream(pseudo, "pseudo") if quota_pseudo else None
    for _ in range(num_batches):
        batch = [("pseudo", next(pse_stream)) for _ in range(quota_pseudo)]
        batch += [("labeled", next(lab_stream)) for _ in range(quota_labeled)]
        yield batch


@dataclass
class GenerationReport:
    generations: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"generations": self.generations}


def run_generation(cfg: NstConfig, teacher: AsrModel, labeled: Manifest,
                   unlabeled: Manifest, corpus_root, student_cfg,
                   train_settings: TrainSettings, seed: int,
                   dev: Manifest | None = None,
                   pretrained_checkpoint=None, on_metric=None,
                   artifacts_dir=None) -> tuple[AsrModel, GenerationReport]:
    """One or more noisy-student generations.

    Each generation pseudo-labels the unlabeled pool with the current
    teacher, filters by confidence-per-word, mixes pseudo and labeled
    streams at the configured ratio and fine-tunes a fresh student (from
    the pre-trained encoder when a checkpoint is given). The student is
    promoted to teacher between generations.
    """
    report = GenerationReport()

    def persist():
        if artifacts_dir is not None:
            path = os.path.join(artifacts_dir, "generation_report.json")
            tmp = path + ".tmp"
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump(report.to_dict(), f, indent=2, sort_keys=True)
            os.replace(tmp, path)

    labeled_examples = load_examples(labeled, corpus_root)
    dev_examples = load_examples(dev, corpus_root) if dev is not None else None
    student = None
    for gen_index in range(cfg.generations):
        stage: dict = {"generation": gen_index}
        report.generations.append(stage)
        try:
            t0 = time.perf_counter()
            skip_log: list = []
            pseudo = pseudo_label(teacher, unlabeled, corpus_root, skip_log=skip_log)
            stage["pseudo_labeled"] = len(pseudo)
            stage["skipped"] = skip_log
            stage["timing_pseudo_label_s"] = time.perf_counter() - t0

            t0 = time.perf_counter()
            retained = filter_by_confidence(pseudo, cfg.keep_fraction)
            stage["retained"] = len(retained)
            stage["retained_ids"] = [u.utterance_id for u in retained]
            stage["keep_fraction"] = cfg.keep_fraction
            stage["nst_ratio"] = cfg.nst_ratio
            stage["timing_filter_s"] = time.perf_counter() - t0
            if artifacts_dir is not None:
                write_pseudo_manifest(retained, os.path.join(
                    artifacts_dir, f"pseudo_gen{gen_index}.jsonl"))

            pseudo_examples = [
                LabeledExample(utterance_id=u.utterance_id,
                               spec=logmel(read_wav(os.path.join(corpus_root, u.audio))),
                               target=list(u.hypothesis), transcript=u.transcript)
                for u in retained if u.hypothesis
            ]

            t0 = time.perf_counter()
            student = init_asr_model(student_cfg, seed=derive_rng("student-init", seed, gen_index).integers(2**31))
            if pretrained_checkpoint is not None:
                load_encoder_weights(student, pretrained_checkpoint)
            mixed = list(mix_batches(labeled_examples, pseudo_examples, cfg.nst_ratio,
                                     train_settings.batch_size,
                                     derive_rng("mix-seed", seed, gen_index).integers(2**31),
                                     train_settings.steps))
            student, ema, _ = _train_on_mixed(student, mixed, train_settings,
                                              seed=derive_rng("student-train", seed, gen_index).integers(2**31),
                                              on_metric=on_metric)
            stage["timing_train_s"] = time.perf_counter() - t0

            if dev_examples is not None:
                scoring = eval_params(student, ema) if train_settings.eval_with_ema else student
                stage["teacher_dev_wer"] = dev_wer(teacher, dev_examples)
                stage["student_dev_wer"] = dev_wer(scoring, dev_examples)
                if on_metric is not None:
                    on_metric("generation_student_dev_wer", gen_index, stage["student_dev_wer"])
                student = scoring if train_settings.eval_with_ema else student
            teacher = student
            stage["status"] = "complete"
            persist()
        except Exception as err:
            stage["status"] = "failed"
            stage["error"] = str(err)
            persist()
            raise
    return student, report


def _train_on_mixed(model: AsrModel, batches, settings: TrainSettings, seed: int,
                    on_metric=None):
    """Same update rule as train_supervised but over pre-mixed batches."""
    enc_params = {k: v for k, v in model.params.items() if k.startswith("encoder.")}
    head_params = model.head_params()
    enc_opt = init_adam(enc_params)
    head_opt = init_adam(head_params)
    ema = init_ema(model.params, settings.ema_decay)
    for step, batch in enumerate(batches):
        losses = []
        for pos, (_, ex) in enumerate(batch):
            spec = ex.spec
            if settings.augment is not None:
                spec = apply_specaugment(spec, settings.augment,
                                         stable_seed("nst-augment", seed, step, ex.utterance_id))
            rng = derive_rng("nst-dropout", seed, step, pos) if model.cfg.dropout > 0 else None
            result = ctc_loss(model.logits(spec, rng=rng), ex.target)
            if result.feasible:
                losses.append(result.loss)
        if not losses:
            raise RuntimeError(f"no feasible utterance in mixed batch at step {step}")
        total = T.mul(sum(losses[1:], losses[0]), 1.0 / len(losses))
        value = total.item()
        if not np.isfinite(value):
            raise RuntimeError(f"non-finite student loss at step {step}")
        grads = T.gradients(total, model.params)
        adam_step(enc_params, {k: grads[k] for k in enc_params}, enc_opt,
                  lr_at(settings.encoder_lr, step + 1))
        adam_step(head_params, {k: grads[k] for k in head_params}, head_opt,
                  lr_at(settings.decoder_lr, step + 1))
        ema_update(ema, model.params)
        if on_metric is not None:
            on_metric("student_train_loss", step, value)
    return model, ema, None
