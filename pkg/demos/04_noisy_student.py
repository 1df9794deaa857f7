"""One noisy-student generation.

The teacher greedily pseudo-labels the unlabeled pool (no LM fusion), the
half with the best teacher-loss-per-word survives, and a fresh student
fine-tunes on batches mixed half labeled / half pseudo-labeled under
SpecAugment. Requires demos/01 and demos/02, plus a teacher from
demos/03 (the encoder-pretrained 100% cell).

Run:  python demos/04_noisy_student.py
"""

import json
import os

from speechlab.config import parse_config
from speechlab.metrics import MetricsReport
from speechlab.runner import run

OUT = "demo-runs"
CORPUS = os.path.join(OUT, "demo-corpus", "corpus")
ENCODER = os.path.join(OUT, "demo-pretrain", "encoder.ckpt")
TEACHER = os.path.join(OUT, "demo-ft-encoder-pretrained-100pct", "model.ckpt")

config = {
    "command": "nst",
    "run_id": "demo-nst",
    "seed": 13,
    "out_dir": OUT,
    "model": {"preset": "xs"},
    "data": {"corpus_dir": CORPUS, "dev_manifest": "dev.jsonl"},
    # students want roughly double the teacher's budget to digest the
    # mixed pseudo-labeled stream
    "train": {
        "steps": 600,
        "batch_size": 4,
        "ema_decay": 0.99,
        "encoder_lr": {"peak_lr": 1.5e-3, "warmup_steps": 60},
        "decoder_lr": {"peak_lr": 3e-3, "warmup_steps": 20},
    },
    "nst": {"keep_fraction": 0.5, "nst_ratio": 0.5, "generations": 1},
    "teacher": {"checkpoint": TEACHER},
    "init": {"kind": "encoder-pretrained", "checkpoint": ENCODER},
}

_, run_dir = run(parse_config(config))
report = MetricsReport.load(os.path.join(run_dir, "metrics.json"))
generation = json.load(open(os.path.join(run_dir, "generation_report.json")))
stage = generation["generations"][0]

print(f"pseudo-labeled {stage['pseudo_labeled']} utterances, retained "
      f"{stage['retained']} (keep_fraction {stage['keep_fraction']})")
print(f"teacher dev WER {report.summary['teacher_dev_wer']:.3f}")
print(f"student dev WER {report.summary['student_dev_wer']:.3f}")
print(f"\nretained pseudo-labels: {os.path.join(run_dir, 'pseudo_gen0.jsonl')}")
with open(os.path.join(run_dir, "pseudo_gen0.jsonl")) as f:
    for line in list(f)[:3]:
        print("  ", line.strip())
