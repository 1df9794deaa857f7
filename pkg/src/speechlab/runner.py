"""Experiment runner: executes one validated config end to end.

Each run owns out_dir/run_id. The effective config, a metrics report and
every artifact land there; a mid-run failure still persists the partial
report flagged incomplete.
"""

from __future__ import annotations

import json
import os
import time

import numpy as np

from .audio import logmel, read_wav
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import CorpusSpec, generate_corpus, read_labels
from .ctc import wer
from .fusion import FusionParams, beam_decode_fused, tune_fusion
from .lm import train_char_lm
from .manifest import read_manifest
from .metrics import MetricsReport, atomic_write_text, config_digest
from .nst import NstConfig, run_generation
from .pretrain import PretrainSettings, run_pretraining
from .probe import (METHODS, ProbeCell, ProbeResult, average_accuracy, eval_map,
                    extract_frames, extract_pooled, select_best, train_mlp_head,
                    train_probe)
from .seeding import derive_rng
from .supervised import (AsrModel, TrainSettings, dev_wer, eval_params,
                         init_asr_model, load_encoder_weights, load_examples,
                         load_full_model, save_model, train_supervised)
from .tokens import default_vocabulary
from . import tensor as T


class RunError(RuntimeError):
    pass


def _resolve(corpus_dir: str, name: str | None) -> str | None:
    if name is None:
        return None
    if os.path.isabs(name):
        if not os.path.exists(name):
            raise RunError(f"referenced path does not exist: {name}")
        return name
    for base in (corpus_dir, os.getcwd()):
        path = os.path.join(base, name)
        if os.path.exists(path):
            return path
    raise RunError(f"referenced path does not exist: {os.path.join(corpus_dir, name)}")


def _load_asr_from_checkpoint(path, vocab) -> AsrModel:
    from .conformer import ConformerConfig
    tensors, meta = load_checkpoint(path)
    if "model" not in meta:
        raise RunError(f"checkpoint {path} lacks architecture metadata")
    cfg = ConformerConfig(**meta["model"])
    model = init_asr_model(cfg, seed=0, vocab=vocab)
    for name, p in model.params.items():
        if name not in tensors:
            raise RunError(f"checkpoint {path} is missing weight {name}")
        p.data = tensors[name].copy()
    return model


def _train_fraction_subset(manifest, fraction: float, seed: int):
    if not 0.0 < fraction <= 1.0:
        raise RunError(f"train_fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return manifest
    ids = manifest.ids()
    order = derive_rng("train-fraction", seed).permutation(len(ids))
    keep = [ids[int(i)] for i in order[:int(np.ceil(fraction * len(ids)))]]
    return manifest.subset(keep)


def _train_settings(section: dict) -> TrainSettings:
    return TrainSettings(steps=section["steps"], batch_size=section["batch_size"],
                         encoder_lr=section["encoder_lr"], decoder_lr=section["decoder_lr"],
                         ema_decay=section["ema_decay"],
                         eval_with_ema=section["eval_with_ema"],
                         eval_every=section["eval_every"], augment=section["augment"])


def run(config: ExperimentConfig | str, *, out_dir=None, seed_override=None,
        preset_override=None) -> tuple[int, str]:
    """Execute a command config; returns (exit status, run directory)."""
    if not isinstance(config, ExperimentConfig):
        config = load_config(config, out_dir=out_dir, seed_override=seed_override,
                             preset_override=preset_override)
    base = config.out_dir or out_dir
    if base is None:
        raise ConfigError("out_dir", "missing: set it in the config or pass --out-dir")
    run_dir = os.path.join(base, config.run_id)
    os.makedirs(run_dir, exist_ok=True)
    # the digest identifies the computation; where artifacts land is not part of it
    digest = config_digest({k: v for k, v in config.raw.items() if k != "out_dir"})
    atomic_write_text(os.path.join(run_dir, "config.json"),
                      json.dumps(config.raw, indent=2, sort_keys=True) + "\n")
    report = MetricsReport(run_id=config.run_id, config_digest=digest)
    started = time.perf_counter()
    try:
        handler = _HANDLERS[config.command]
        handler(config, run_dir, report)
        report.complete = True
        return 0, run_dir
    except Exception as err:
        report.error = f"{type(err).__name__}: {err}"
        raise
    finally:
        report.timing["wall_s"] = time.perf_counter() - started
        report.save(os.path.join(run_dir, "metrics.json"))


def _cmd_gen_corpus(config: ExperimentConfig, run_dir: str, report: MetricsReport) -> None:
    section = config.sections["corpus"]
    spec = CorpusSpec(splits=dict(section["splits"]), noise_level=section["noise_level"],
                      words_per_utterance=tuple(section["words_per_utterance"]),
                      word_length=tuple(section["word_length"]),
                      lexicon_size=section["lexicon_size"],
                      content_classes=section["content_classes"])
    generated = generate_corpus(os.path.join(run_dir, "corpus"), spec, config.seed)
    for split, path in sorted(generated.manifests.items()):
        report.set_summary(f"num_{split}", len(read_manifest(path)))


def _cmd_pretrain(config: ExperimentConfig, run_dir: str, report: MetricsReport) -> None:
    cfg = config.sections["model"]
    data = config.sections["data"]
    section = config.sections["pretrain"]
    corpus_dir = data["corpus_dir"]
    if not os.path.isdir(corpus_dir):
        raise RunError(f"corpus_dir does not exist: {corpus_dir}")
    names = data["pretrain_manifests"] or ["labeled.jsonl", "unlabeled.jsonl"]
    specs, order = {}, []
    for name in names:
        manifest = read_manifest(_resolve(corpus_dir, name))
        for entry in manifest:
            specs[entry.utterance_id] = logmel(read_wav(os.path.join(corpus_dir, entry.audio)))
            order.append(entry.utterance_id)
    settings = PretrainSettings(steps=section["steps"], batch_size=section["batch_size"],
                                schedule=section["lr"], start_prob=section["start_prob"],
                                span_length=section["span_length"],
                                num_negatives=section["num_negatives"],
                                temperature=section["temperature"],
                                use_ema=section["use_ema"], ema_decay=section["ema_decay"],
                                stop_target_grad=section["stop_target_grad"])
    params, ema, losses = run_pretraining(
        specs, order, cfg, settings, config.seed,
        on_step=lambda step, value: report.add("pretrain_loss", step, value))
    export = ema.snapshot() if ema is not None else params
    save_checkpoint(os.path.join(run_dir, "encoder.ckpt"), export,
                    {"kind": "pretrain", "encoder_only": True, "model": cfg.to_dict(),
                     "step": settings.steps})
    report.set_summary("final_loss", losses[-1])
    report.set_summary("initial_loss", losses[0])


def _cmd_finetune(config: ExperimentConfig, run_dir: str, report: MetricsReport) -> None:
    cfg = config.sections["model"]
    data = config.sections["data"]
    init = config.sections["init"]
    settings = _train_settings(config.sections["train"])
    corpus_dir = data["corpus_dir"]
    train_path = _resolve(corpus_dir, data["train_manifest"] or "labeled.jsonl")
    dev_path = _resolve(corpus_dir, data["dev_manifest"]) if data["dev_manifest"] else None
    model = init_asr_model(cfg, seed=config.seed)
    if init["kind"] == "encoder-pretrained":
        load_encoder_weights(model, _resolve(corpus_dir, init["checkpoint"]))
    elif init["kind"] == "full":
        load_full_model(model, _resolve(corpus_dir, init["checkpoint"]))
    train_manifest = _train_fraction_subset(read_manifest(train_path).labeled(),
                                            data["train_fraction"], config.seed)
    train_examples = load_examples(train_manifest, corpus_dir)
    dev_examples = load_examples(read_manifest(dev_path), corpus_dir) if dev_path else None
    state: dict = {}
    model, ema, final_dev = train_supervised(model, train_examples, settings, config.seed,
                                             dev_examples=dev_examples,
                                             on_metric=report.add, state_out=state)
    export = eval_params(model, ema) if settings.eval_with_ema else model
    save_model(export, os.path.join(run_dir, "model.ckpt"), settings.steps,
               extra_meta={"init": init["kind"]}, optimizers=state, ema=ema)
    report.set_summary("num_train", len(train_examples))
    if final_dev is not None:
        report.set_summary("final_dev_wer", final_dev)


def _cmd_nst(config: ExperimentConfig, run_dir: str, report: MetricsReport) -> None:
    cfg = config.sections["model"]
    data = config.sections["data"]
    corpus_dir = data["corpus_dir"]
    settings = _train_settings(config.sections["train"])
    nst_cfg = NstConfig(keep_fraction=config.sections["nst"]["keep_fraction"],
                        nst_ratio=config.sections["nst"]["nst_ratio"],
                        generations=config.sections["nst"]["generations"])
    vocab = default_vocabulary()
    teacher = _load_asr_from_checkpoint(
        _resolve(corpus_dir, config.sections["teacher"]["checkpoint"]), vocab)
    labeled = read_manifest(_resolve(corpus_dir, data["train_manifest"] or "labeled.jsonl")).labeled()
    labeled = _train_fraction_subset(labeled, data["train_fraction"], config.seed)
    unlabeled = read_manifest(_resolve(corpus_dir, data["unlabeled_manifest"] or "unlabeled.jsonl"))
    dev = read_manifest(_resolve(corpus_dir, data["dev_manifest"])) if data["dev_manifest"] else None
    init = config.sections["init"]
    pre_ckpt = _resolve(corpus_dir, init["checkpoint"]) if init["checkpoint"] else None
    student, gen_report = run_generation(
        nst_cfg, teacher, labeled, unlabeled, corpus_dir, cfg, settings,
        config.seed, dev=dev, pretrained_checkpoint=pre_ckpt,
        on_metric=report.add, artifacts_dir=run_dir)
    save_model(student, os.path.join(run_dir, "student.ckpt"), settings.steps,
               extra_meta={"nst": True})
    last = gen_report.generations[-1]
    if "student_dev_wer" in last:
        report.set_summary("student_dev_wer", last["student_dev_wer"])
        report.set_summary("teacher_dev_wer", last["teacher_dev_wer"])
    report.set_summary("retained", last["retained"])


def _cmd_probe(config: ExperimentConfig, run_dir: str, report: MetricsReport) -> None:
    cfg = config.sections["model"]
    data = config.sections["data"]
    section = config.sections["probe"]
    corpus_dir = data["corpus_dir"]
    vocab = default_vocabulary()
    ckpt = _resolve(corpus_dir, section["checkpoint"])
    if section["checkpoint_kind"] == "pretrain":
        model = init_asr_model(cfg, seed=config.seed, vocab=vocab)
        load_encoder_weights(model, ckpt)
    else:
        model = _load_asr_from_checkpoint(ckpt, vocab)
    train_man = read_manifest(_resolve(corpus_dir, data["train_manifest"] or "labeled.jsonl"))
    dev_man = read_manifest(_resolve(corpus_dir, data["dev_manifest"] or "dev.jsonl"))
    test_man = read_manifest(_resolve(corpus_dir, data["test_manifest"] or "test.jsonl"))
    labels = read_labels(_resolve(corpus_dir, "labels.jsonl"))
    layers = section["layers"] if section["layers"] is not None \
        else list(range(-1, cfg.num_layers + 1))
    if section["protocol"] == "linear":
        _probe_linear(model, section, layers, labels, train_man, dev_man, test_man,
                      corpus_dir, run_dir, report, config.seed)
    else:
        _probe_multilabel(model, section, layers, labels, train_man, dev_man, test_man,
                          corpus_dir, run_dir, report, config.seed)


def _task_labels(labels: dict, manifest, task: str) -> np.ndarray:
    try:
        return np.array([labels[e.utterance_id][task] for e in manifest], dtype=np.int64)
    except KeyError as err:
        raise RunError(f"labels.jsonl lacks {err} for task {task!r}") from None


def _probe_linear(model, section, layers, labels, train_man, dev_man, test_man,
                  corpus_dir, run_dir, report, seed) -> None:
    methods = section["methods"] or list(METHODS)
    per_task_curves: dict[str, dict[int, float]] = {}
    task_results = {}
    for task in section["tasks"]:
        y_train = _task_labels(labels, train_man, task)
        y_dev = _task_labels(labels, dev_man, task)
        y_test = _task_labels(labels, test_man, task)
        cells = []
        best_per_layer: dict[int, float] = {}
        for layer in layers:
            f_train = extract_pooled(model, train_man, layer, corpus_dir)
            f_dev = extract_pooled(model, dev_man, layer, corpus_dir)
            f_test = extract_pooled(model, test_man, layer, corpus_dir)
            for method in methods:
                probe = train_probe(f_train.matrix, y_train, method, seed)
                cell = ProbeCell(layer=layer, method=method,
                                 dev_accuracy=probe.accuracy(f_dev.matrix, y_dev),
                                 test_accuracy=probe.accuracy(f_test.matrix, y_test))
                cells.append(cell)
            best_per_layer[layer] = max(c.dev_accuracy for c in cells if c.layer == layer)
        selected = select_best(cells)
        task_results[task] = ProbeResult(cells=cells, selected=selected)
        per_task_curves[task] = best_per_layer
        report.set_summary(f"{task}_selected_test_accuracy", selected.test_accuracy)
    curve = average_accuracy(per_task_curves)
    payload = {"protocol": "linear",
               "tasks": {task: result.to_dict() for task, result in task_results.items()},
               "average_accuracy": {str(k): v for k, v in curve.items()}}
    atomic_write_text(os.path.join(run_dir, "probe_report.json"),
                      json.dumps(payload, indent=2, sort_keys=True) + "\n")
    for layer, value in curve.items():
        report.add("average_accuracy", layer, value)


def _probe_multilabel(model, section, layers, labels, train_man, dev_man, test_man,
                      corpus_dir, run_dir, report, seed) -> None:
    content_classes = 1 + max(int(r["content_class"]) for r in labels.values())
    speakers = 1 + max(int(r["speaker"]) for r in labels.values())

    def targets(manifest) -> np.ndarray:
        rows = []
        for e in manifest:
            rec = labels[e.utterance_id]
            row = np.zeros(content_classes + speakers)
            row[int(rec["content_class"])] = 1.0
            row[content_classes + int(rec["speaker"])] = 1.0
            rows.append(row)
        return np.stack(rows)

    results = {}
    for layer in layers:
        _, train_frames = extract_frames(model, train_man, layer, corpus_dir)
        head = train_mlp_head(train_frames, targets(train_man), section["epochs"], seed)
        dev_ids, dev_frames = extract_frames(model, dev_man, layer, corpus_dir)
        dev_map = eval_map(head, list(zip(dev_ids, dev_frames, targets(dev_man))))
        test_ids, test_frames = extract_frames(model, test_man, layer, corpus_dir)
        test_map = eval_map(head, list(zip(test_ids, test_frames, targets(test_man))))
        results[layer] = {"dev_map": dev_map.map_value, "test_map": test_map.map_value,
                          "excluded_classes": test_map.excluded_classes}
        report.add("dev_map", layer, dev_map.map_value)
    best_layer = max(sorted(results), key=lambda l: results[l]["dev_map"])
    payload = {"protocol": "multilabel", "per_layer": {str(k): v for k, v in results.items()},
               "best_layer": best_layer,
               "best_test_map": results[best_layer]["test_map"]}
    atomic_write_text(os.path.join(run_dir, "probe_report.json"),
                      json.dumps(payload, indent=2, sort_keys=True) + "\n")
    report.set_summary("best_test_map", results[best_layer]["test_map"])


def _cmd_evaluate(config: ExperimentConfig, run_dir: str, report: MetricsReport) -> None:
    data = config.sections["data"]
    section = config.sections["decode"]
    corpus_dir = data["corpus_dir"]
    vocab = default_vocabulary()
    model = _load_asr_from_checkpoint(_resolve(corpus_dir, section["checkpoint"]), vocab)
    manifest = read_manifest(_resolve(corpus_dir, data["manifest"] or "test.jsonl"))
    refs, specs, ids = [], [], []
    for entry in manifest:
        specs.append(logmel(read_wav(os.path.join(corpus_dir, entry.audio))))
        refs.append(entry.transcript or "")
        ids.append(entry.utterance_id)
    with T.no_grad():
        logits = [model.logits(s).data for s in specs]
    lm = None
    fusion = FusionParams(beam_width=1)  # plain greedy unless fusing
    if section["mode"] == "fused":
        lm_manifest = read_manifest(_resolve(corpus_dir,
                                             section["lm_train_manifest"] or "labeled.jsonl"))
        lm = train_char_lm([e.transcript for e in lm_manifest if e.transcript],
                           order=section["lm_order"], smoothing=section["lm_smoothing"])
        if section["tune_trials"]:
            dev_path = _resolve(corpus_dir, data["dev_manifest"] or "dev.jsonl")
            dev_man = read_manifest(dev_path)
            dev_specs = [logmel(read_wav(os.path.join(corpus_dir, e.audio))) for e in dev_man]
            with T.no_grad():
                dev_logits = [model.logits(s).data for s in dev_specs]
            tuned = tune_fusion(dev_logits, [e.transcript or "" for e in dev_man], lm,
                                trials=section["tune_trials"], seed=config.seed,
                                beam_width=section["beam_width"])
            fusion = tuned.params
            report.set_summary("tuned_fusion_weight", fusion.fusion_weight)
            report.set_summary("tuned_non_blank_reward", fusion.non_blank_reward)
            report.set_summary("tuned_dev_wer", tuned.dev_wer)
        else:
            fusion = FusionParams(fusion_weight=section["fusion_weight"] or 0.0,
                                  non_blank_reward=section["non_blank_reward"] or 0.0,
                                  beam_width=section["beam_width"])
    lines = []
    hyps = []
    for utt_id, lg in zip(ids, logits):
        result = beam_decode_fused(lg, lm, fusion, vocab)
        text = vocab.decode(result.ids)
        hyps.append(text)
        lines.append(json.dumps({"id": utt_id, "hypothesis": text,
                                 "num_words": len(text.split()),
                                 "log_score": result.score}, sort_keys=True))
    atomic_write_text(os.path.join(run_dir, "decodes.jsonl"), "\n".join(lines) + "\n")
    if any(r for r in refs):
        report.set_summary("wer", wer(refs, hyps))
    report.set_summary("num_utterances", len(ids))


_HANDLERS = {
    "gen-corpus": _cmd_gen_corpus,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "nst": _cmd_nst,
    "probe": _cmd_probe,
    "evaluate": _cmd_evaluate,
}
