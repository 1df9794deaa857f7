"""Synthetic corpus construction.

A corpus directory holds audio/*.wav, one manifest per split (labeled
train, unlabeled pool, dev, test), a labels.jsonl sidecar recording the
generator parameters behind each utterance (speaker, content class), and
corpus_meta.json with the lexicon. Everything derives from one seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .audio import NUM_SPEAKERS, speaker_of_seed, synth_utterance, write_wav
from .manifest import Manifest, ManifestEntry, write_manifest
from .seeding import derive_rng, stable_seed

LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class CorpusSpec:
    splits: dict  # split name -> utterance count
    noise_level: float = 0.05
    words_per_utterance: tuple[int, int] = (2, 4)
    word_length: tuple[int, int] = (2, 4)
    lexicon_size: int = 12
    content_classes: int = 3

    def __post_init__(self):
        if self.lexicon_size % self.content_classes != 0:
            raise ValueError("lexicon_size must be divisible by content_classes")
        for name, count in self.splits.items():
            if count < 0:
                raise ValueError(f"split {name!r} has negative count")


def build_lexicon(spec: CorpusSpec, seed: int) -> list[list[str]]:
    """Word groups, one per content class, in ascending pitch register.

    Letters are partitioned into contiguous alphabet bands so every word of
    class k is rendered in a distinct frequency register.
    """
    rng = derive_rng("lexicon", seed)
    per_class = spec.lexicon_size // spec.content_classes
    band = len(LETTERS) // spec.content_classes
    groups = []
    for c in range(spec.content_classes):
        letters = LETTERS[c * band:(c + 1) * band]
        words = set()
        while len(words) < per_class:
            n = rng.integers(spec.word_length[0], spec.word_length[1] + 1)
            words.add("".join(rng.choice(list(letters)) for _ in range(n)))
        groups.append(sorted(words))
    return groups


def _sample_transcript(rng: np.random.Generator, groups: list[list[str]], cls: int,
                       spec: CorpusSpec) -> str:
    n = rng.integers(spec.words_per_utterance[0], spec.words_per_utterance[1] + 1)
    words = [groups[cls][rng.integers(len(groups[cls]))] for _ in range(n)]
    return " ".join(words)


@dataclass
class GeneratedCorpus:
    root: str
    manifests: dict = field(default_factory=dict)  # split -> manifest path
    labels_path: str = ""
    meta_path: str = ""


def generate_corpus(root, spec: CorpusSpec, seed: int) -> GeneratedCorpus:
    root = os.fspath(root)
    audio_dir = os.path.join(root, "audio")
    os.makedirs(audio_dir, exist_ok=True)
    groups = build_lexicon(spec, seed)
    rng = derive_rng("corpus", seed)
    out = GeneratedCorpus(root=root)
    labels = []
    index = 0
    for split in sorted(spec.splits):
        count = spec.splits[split]
        entries = []
        for _ in range(count):
            utt_id = f"{split}-{index:05d}"
            utt_seed = stable_seed("utt", seed, index)
            cls = int(rng.integers(spec.content_classes))
            transcript = _sample_transcript(rng, groups, cls, spec)
            wav = synth_utterance(transcript, utt_seed, spec.noise_level)
            rel = os.path.join("audio", f"{utt_id}.wav")
            write_wav(os.path.join(root, rel), wav)
            visible = transcript if split != "unlabeled" else None
            entries.append(ManifestEntry(utterance_id=utt_id, audio=rel,
                                         transcript=visible, duration_s=wav.duration_s))
            labels.append({"id": utt_id, "transcript": transcript,
                           "speaker": speaker_of_seed(utt_seed), "content_class": cls,
                           "seed": utt_seed})
            index += 1
        path = os.path.join(root, f"{split}.jsonl")
        write_manifest(Manifest(tuple(entries)), path)
        out.manifests[split] = path
    out.labels_path = os.path.join(root, "labels.jsonl")
    with open(out.labels_path, "w", encoding="utf-8") as f:
        for record in labels:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    out.meta_path = os.path.join(root, "corpus_meta.json")
    with open(out.meta_path, "w", encoding="utf-8") as f:
        json.dump({"seed": seed, "lexicon_groups": groups, "noise_level": spec.noise_level,
                   "content_classes": spec.content_classes, "num_speakers": NUM_SPEAKERS},
                  f, indent=2, sort_keys=True)
    return out


def read_labels(path) -> dict[str, dict]:
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                record = json.loads(line)
                out[record["id"]] = record
    return out
