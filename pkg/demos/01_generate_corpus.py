"""Generate a synthetic speech corpus and look inside it.

Every utterance renders its transcript as a deterministic sequence of
120 ms two-partial tones (one tone signature per grapheme, pitch and
timbre varied per speaker), so corpus generation is exactly reproducible
from one seed.

Run:  python demos/01_generate_corpus.py
"""

import json
import os

from speechlab.config import parse_config
from speechlab.runner import run

OUT = "demo-runs"

config = {
    "command": "gen-corpus",
    "run_id": "demo-corpus",
    "seed": 2024,
    "out_dir": OUT,
    "corpus": {
        "splits": {"labeled": 40, "unlabeled": 60, "dev": 20, "test": 20},
        "noise_level": 0.08,
        "words_per_utterance": [2, 3],
        "word_length": [3, 3],
        "lexicon_size": 9,
        "content_classes": 3,
    },
}

status, run_dir = run(parse_config(config))
corpus = os.path.join(run_dir, "corpus")
print(f"corpus written to {corpus}\n")

print("first three labeled utterances:")
with open(os.path.join(corpus, "labeled.jsonl")) as f:
    for line in list(f)[:3]:
        print("  ", line.strip())

meta = json.load(open(os.path.join(corpus, "corpus_meta.json")))
print("\nlexicon by content class (pitch register):")
for cls, words in enumerate(meta["lexicon_groups"]):
    print(f"  class {cls}: {' '.join(words)}")

print("\nthe unlabeled split hides its transcripts:")
with open(os.path.join(corpus, "unlabeled.jsonl")) as f:
    print("  ", f.readline().strip())

print("\nlabels.jsonl keeps the generator parameters for probing tasks:")
with open(os.path.join(corpus, "labels.jsonl")) as f:
    print("  ", f.readline().strip())
