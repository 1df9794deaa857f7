"""Experiment configuration: JSON with strict unknown-field rejection.

Every command takes one config file. Schema errors carry the offending
field path so a typo fails loudly before any compute runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .augment import AugmentPolicy
from .conformer import ConformerConfig, preset_config
from .optim import LrSchedule

COMMANDS = ("gen-corpus", "pretrain", "finetune", "nst", "probe", "evaluate")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.field_path = path
        super().__init__(f"{path}: {message}")


def _expect(record: dict, path: str, required: dict, optional: dict) -> dict:
    if not isinstance(record, dict):
        raise ConfigError(path or "<root>", f"expected an object, got {type(record).__name__}")
    allowed = set(required) | set(optional)
    for key in record:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
    out = {}
    for key, kind in required.items():
        if key not in record:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
        out[key] = _coerce(record[key], kind, f"{path}.{key}" if path else key)
    for key, (kind, default) in optional.items():
        if key in record:
            out[key] = _coerce(record[key], kind, f"{path}.{key}" if path else key)
        else:
            out[key] = default
    return out


def _coerce(value, kind, path):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if kind is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected an object, got {value!r}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return value
    raise AssertionError(kind)


def parse_model(section: dict, path: str = "model") -> ConformerConfig:
    fields = _expect(section, path,
                     required={},
                     optional={"preset": (str, None), "num_layers": (int, None),
                               "model_dim": (int, None), "attention_heads": (int, None),
                               "conv_kernel_size": (int, 5),
                               "relative_attention": (bool, True),
                               "ff_expansion": (int, 4), "dropout": (float, 0.1)})
    try:
        if fields["preset"] is not None:
            return preset_config(fields["preset"],
                                 relative_attention=fields["relative_attention"],
                                 dropout=fields["dropout"])
        for key in ("num_layers", "model_dim", "attention_heads"):
            if fields[key] is None:
                raise ConfigError(f"{path}.{key}", "required when no preset is given")
        return ConformerConfig(num_layers=fields["num_layers"],
                               model_dim=fields["model_dim"],
                               attention_heads=fields["attention_heads"],
                               conv_kernel_size=fields["conv_kernel_size"],
                               relative_attention=fields["relative_attention"],
                               ff_expansion=fields["ff_expansion"],
                               dropout=fields["dropout"])
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(path, str(err)) from None


def parse_schedule(section: dict, path: str) -> LrSchedule:
    fields = _expect(section, path,
                     required={"peak_lr": float, "warmup_steps": int},
                     optional={"kind": (str, "transformer")})
    try:
        return LrSchedule(peak_lr=fields["peak_lr"], warmup_steps=fields["warmup_steps"],
                          kind=fields["kind"])
    except ValueError as err:
        raise ConfigError(path, str(err)) from None


def parse_augment(section, path: str) -> AugmentPolicy | None:
    if section is None:
        return None
    fields = _expect(section, path,
                     required={},
                     optional={"freq_mask_count": (int, 2), "freq_mask_param": (int, 27),
                               "time_mask_count": (int, 10),
                               "max_time_mask_ratio": (float, 0.05)})
    try:
        return AugmentPolicy(**fields)
    except ValueError as err:
        raise ConfigError(path, str(err)) from None


@dataclass
class ExperimentConfig:
    command: str
    run_id: str
    seed: int
    out_dir: str | None
    raw: dict  # the effective config after overrides; digested for the report
    sections: dict  # parsed per-command payload


def load_config(path, *, out_dir=None, seed_override=None, preset_override=None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigError("<file>", f"invalid JSON: {err.msg} at line {err.lineno}") from None
    return parse_config(raw, out_dir=out_dir, seed_override=seed_override,
                        preset_override=preset_override)


def parse_config(raw: dict, *, out_dir=None, seed_override=None,
                 preset_override=None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    raw = json.loads(json.dumps(raw))  # private copy
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    if out_dir is not None:
        raw["out_dir"] = str(out_dir)
    if preset_override is not None:
        raw.setdefault("model", {})
        raw["model"] = {**raw["model"], "preset": preset_override}
        for explicit in ("num_layers", "model_dim", "attention_heads"):
            raw["model"].pop(explicit, None)

    top_optional = {
        "out_dir": (str, None),
        "model": (dict, None), "data": (dict, None), "corpus": (dict, None),
        "pretrain": (dict, None), "train": (dict, None), "init": (dict, None),
        "nst": (dict, None), "probe": (dict, None), "decode": (dict, None),
        "teacher": (dict, None),
    }
    top = _expect(raw, "", required={"command": str, "run_id": str, "seed": int},
                  optional=top_optional)
    if top["command"] not in COMMANDS:
        raise ConfigError("command", f"unknown command {top['command']!r}; "
                                     f"expected one of {list(COMMANDS)}")
    sections = _parse_command_sections(top)
    return ExperimentConfig(command=top["command"], run_id=top["run_id"],
                            seed=top["seed"], out_dir=top["out_dir"], raw=raw,
                            sections=sections)


def _require_section(top: dict, name: str) -> dict:
    if top[name] is None:
        raise ConfigError(name, f"required for command {top['command']!r}")
    return top[name]


def _parse_data(section: dict, path: str = "data") -> dict:
    return _expect(section, path,
                   required={"corpus_dir": str},
                   optional={"train_manifest": (str, None), "dev_manifest": (str, None),
                             "test_manifest": (str, None), "unlabeled_manifest": (str, None),
                             "manifest": (str, None), "train_fraction": (float, 1.0),
                             "pretrain_manifests": (list, None)})


def _parse_train(section: dict, path: str = "train") -> dict:
    fields = _expect(section, path,
                     required={"steps": int},
                     optional={"batch_size": (int, 4), "encoder_lr": (dict, None),
                               "decoder_lr": (dict, None), "ema_decay": (float, 0.9999),
                               "eval_with_ema": (bool, True), "eval_every": (int, 0),
                               "augment": (dict, None), "no_augment": (bool, False)})
    fields["encoder_lr"] = parse_schedule(fields["encoder_lr"] or
                                          {"peak_lr": 1e-3, "warmup_steps": 60},
                                          f"{path}.encoder_lr")
    fields["decoder_lr"] = parse_schedule(fields["decoder_lr"] or
                                          {"peak_lr": 3e-3, "warmup_steps": 20},
                                          f"{path}.decoder_lr")
    fields["augment"] = None if fields["no_augment"] else \
        (parse_augment(fields["augment"], f"{path}.augment") or AugmentPolicy())
    return fields


def _parse_command_sections(top: dict) -> dict:
    command = top["command"]
    sections: dict = {}
    if command == "gen-corpus":
        corpus = _require_section(top, "corpus")
        sections["corpus"] = _expect(
            corpus, "corpus",
            required={"splits": dict},
            optional={"noise_level": (float, 0.05), "words_per_utterance": (list, [2, 3]),
                      "word_length": (list, [3, 3]), "lexicon_size": (int, 9),
                      "content_classes": (int, 3)})
        for name, count in sections["corpus"]["splits"].items():
            if not isinstance(count, int) or count < 0:
                raise ConfigError(f"corpus.splits.{name}", "must be a non-negative integer")
        return sections
    sections["model"] = parse_model(_require_section(top, "model"))
    if command == "pretrain":
        sections["data"] = _parse_data(_require_section(top, "data"))
        pre = _require_section(top, "pretrain")
        sections["pretrain"] = _expect(
            pre, "pretrain",
            required={"steps": int},
            optional={"batch_size": (int, 8), "lr": (dict, None),
                      "start_prob": (float, 0.065), "span_length": (int, 10),
                      "num_negatives": (int, 8), "temperature": (float, 0.1),
                      "use_ema": (bool, True), "ema_decay": (float, 0.9999),
                      "stop_target_grad": (bool, False)})
        sections["pretrain"]["lr"] = parse_schedule(
            sections["pretrain"]["lr"] or {"peak_lr": 2e-3, "warmup_steps": 30},
            "pretrain.lr")
    elif command == "finetune":
        sections["data"] = _parse_data(_require_section(top, "data"))
        sections["train"] = _parse_train(_require_section(top, "train"))
        init = top["init"] or {"kind": "scratch"}
        sections["init"] = _expect(init, "init", required={"kind": str},
                                   optional={"checkpoint": (str, None)})
        if sections["init"]["kind"] not in ("scratch", "encoder-pretrained", "full"):
            raise ConfigError("init.kind", f"unknown init kind {sections['init']['kind']!r}")
        if sections["init"]["kind"] != "scratch" and not sections["init"]["checkpoint"]:
            raise ConfigError("init.checkpoint", "required unless init.kind is 'scratch'")
    elif command == "nst":
        sections["data"] = _parse_data(_require_section(top, "data"))
        sections["train"] = _parse_train(_require_section(top, "train"))
        nst = _require_section(top, "nst")
        sections["nst"] = _expect(nst, "nst",
                                  required={},
                                  optional={"keep_fraction": (float, 0.5),
                                            "nst_ratio": (float, 0.5),
                                            "generations": (int, 1)})
        teacher = _require_section(top, "teacher")
        sections["teacher"] = _expect(teacher, "teacher",
                                      required={"checkpoint": str}, optional={})
        init = top["init"] or {"kind": "scratch"}
        sections["init"] = _expect(init, "init", required={"kind": str},
                                   optional={"checkpoint": (str, None)})
    elif command == "probe":
        sections["data"] = _parse_data(_require_section(top, "data"))
        probe = _require_section(top, "probe")
        sections["probe"] = _expect(
            probe, "probe",
            required={"checkpoint": str},
            optional={"protocol": (str, "linear"), "tasks": (list, ["content_class"]),
                      "layers": (list, None), "methods": (list, None),
                      "epochs": (int, 60), "num_classes": (int, None),
                      "checkpoint_kind": (str, "asr")})
        if sections["probe"]["protocol"] not in ("linear", "multilabel"):
            raise ConfigError("probe.protocol", "must be 'linear' or 'multilabel'")
    elif command == "evaluate":
        sections["data"] = _parse_data(_require_section(top, "data"))
        decode = _require_section(top, "decode")
        sections["decode"] = _expect(
            decode, "decode",
            required={"checkpoint": str},
            optional={"mode": (str, "greedy"), "lm_order": (int, 4),
                      "lm_smoothing": (float, 0.1), "lm_train_manifest": (str, None),
                      "fusion_weight": (float, None), "non_blank_reward": (float, None),
                      "beam_width": (int, 4), "tune_trials": (int, 0)})
        if sections["decode"]["mode"] not in ("greedy", "fused"):
            raise ConfigError("decode.mode", "must be 'greedy' or 'fused'")
    return sections
