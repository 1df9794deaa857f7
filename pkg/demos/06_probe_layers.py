"""Layer-wise linear probing of the pre-trained encoder.

For each layer (-1 is the post-subsampling input embedding, the last
entry is the projection output) and each linear model family, a probe is
fit on time-pooled activations; the best dev configuration is reported on
test, and the per-layer average accuracy across tasks traces which depth
carries the most linearly accessible structure. Requires demos/01-02.

Run:  python demos/06_probe_layers.py
"""

import json
import os

from speechlab.config import parse_config
from speechlab.runner import run

OUT = "demo-runs"
CORPUS = os.path.join(OUT, "demo-corpus", "corpus")
ENCODER = os.path.join(OUT, "demo-pretrain", "encoder.ckpt")

config = {
    "command": "probe",
    "run_id": "demo-probe",
    "seed": 17,
    "out_dir": OUT,
    "model": {"preset": "xs"},
    "data": {"corpus_dir": CORPUS, "train_manifest": "labeled.jsonl",
             "dev_manifest": "dev.jsonl", "test_manifest": "test.jsonl"},
    "probe": {"checkpoint": ENCODER, "checkpoint_kind": "pretrain",
              "protocol": "linear", "tasks": ["content_class", "speaker"]},
}

_, run_dir = run(parse_config(config))
report = json.load(open(os.path.join(run_dir, "probe_report.json")))

for task, result in report["tasks"].items():
    sel = result["selected"]
    print(f"task {task}: best layer {sel['layer']} ({sel['method']}), "
          f"dev {sel['dev_accuracy']:.3f}, test {sel['test_accuracy']:.3f}")

print("\naverage accuracy across tasks by layer:")
for layer in sorted(report["average_accuracy"], key=int):
    value = report["average_accuracy"][layer]
    print(f"  layer {int(layer):3d}  {value:.3f}  {'#' * int(value * 40)}")
