"""Shared fixtures: one tiny deterministic corpus per test session."""

import pytest

from speechlab.corpus import CorpusSpec, generate_corpus
from speechlab.manifest import read_manifest


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny-corpus")
    spec = CorpusSpec(splits={"labeled": 10, "unlabeled": 8, "dev": 6, "test": 6},
                      noise_level=0.05, words_per_utterance=(2, 2),
                      word_length=(2, 3), lexicon_size=6, content_classes=3)
    generated = generate_corpus(root, spec, seed=77)
    manifests = {name: read_manifest(path) for name, path in generated.manifests.items()}
    return {"root": str(root), "generated": generated, "manifests": manifests}
