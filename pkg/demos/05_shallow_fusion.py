"""Shallow fusion with a character 4-gram LM.

Decoding maximizes the CTC path score plus a weighted LM score and a
per-grapheme non-blank reward; the (weight, reward) pair comes from a
small random exploration on dev that always includes the no-fusion
baseline. Requires demos/01-03.

Run:  python demos/05_shallow_fusion.py
"""

import json
import os

from speechlab.config import parse_config
from speechlab.metrics import MetricsReport
from speechlab.runner import run

OUT = "demo-runs"
CORPUS = os.path.join(OUT, "demo-corpus", "corpus")
MODEL = os.path.join(OUT, "demo-ft-encoder-pretrained-100pct", "model.ckpt")

greedy = {
    "command": "evaluate", "run_id": "demo-eval-greedy", "seed": 3, "out_dir": OUT,
    "model": {"preset": "xs"},
    "data": {"corpus_dir": CORPUS, "manifest": "test.jsonl"},
    "decode": {"checkpoint": MODEL, "mode": "greedy"},
}
_, gdir = run(parse_config(greedy))
greedy_wer = MetricsReport.load(os.path.join(gdir, "metrics.json")).summary["wer"]

fused = {
    "command": "evaluate", "run_id": "demo-eval-fused", "seed": 3, "out_dir": OUT,
    "model": {"preset": "xs"},
    "data": {"corpus_dir": CORPUS, "manifest": "test.jsonl", "dev_manifest": "dev.jsonl"},
    "decode": {"checkpoint": MODEL, "mode": "fused", "tune_trials": 12,
               "beam_width": 4, "lm_order": 4, "lm_smoothing": 0.1,
               "lm_train_manifest": "labeled.jsonl"},
}
_, fdir = run(parse_config(fused))
report = MetricsReport.load(os.path.join(fdir, "metrics.json"))

print(f"greedy test WER          {greedy_wer:.3f}")
print(f"fused  test WER          {report.summary['wer']:.3f}")
print(f"tuned fusion weight      {report.summary['tuned_fusion_weight']:.3f}")
print(f"tuned non-blank reward   {report.summary['tuned_non_blank_reward']:.3f}")
print(f"tuned dev WER            {report.summary['tuned_dev_wer']:.3f}")

print("\nfirst decode records:")
with open(os.path.join(fdir, "decodes.jsonl")) as f:
    for line in list(f)[:3]:
        record = json.loads(line)
        print(f"  {record['id']}: {record['hypothesis']!r} "
              f"({record['num_words']} words, log score {record['log_score']:.2f})")
