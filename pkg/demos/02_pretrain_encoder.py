"""Contrastive pre-training of the encoder on unlabeled audio.

Feature spans are masked after convolutional subsampling and the encoder
must pick each masked position's linear-projection target out of
distractors from the same utterance. Requires the corpus from
demos/01_generate_corpus.py.

Run:  python demos/02_pretrain_encoder.py
"""

import os

from speechlab.config import parse_config
from speechlab.metrics import MetricsReport
from speechlab.runner import run

OUT = "demo-runs"
CORPUS = os.path.join(OUT, "demo-corpus", "corpus")

config = {
    "command": "pretrain",
    "run_id": "demo-pretrain",
    "seed": 7,
    "out_dir": OUT,
    "model": {"preset": "xs"},
    "data": {"corpus_dir": CORPUS},
    "pretrain": {
        "steps": 200,
        "batch_size": 8,
        "lr": {"peak_lr": 2e-3, "warmup_steps": 30},
        "start_prob": 0.065,
        "span_length": 10,
        "num_negatives": 8,
        "temperature": 0.1,
        "ema_decay": 0.999,  # run-length-appropriate; the schema default 0.9999
                             # would keep the shadow at its initialization here
    },
}

status, run_dir = run(parse_config(config))
report = MetricsReport.load(os.path.join(run_dir, "metrics.json"))
losses = report.series["pretrain_loss"]
print(f"encoder checkpoint: {os.path.join(run_dir, 'encoder.ckpt')}")
print(f"contrastive loss: {losses[0][1]:.3f} (step 0) -> {losses[-1][1]:.3f} "
      f"(step {losses[-1][0]})")
print("\nloss curve (every 25 steps):")
for step, value in losses[::25]:
    bar = "#" * int(value * 12)
    print(f"  step {step:4d}  {value:6.3f}  {bar}")
