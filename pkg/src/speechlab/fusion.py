"""Beam decoding with language-model shallow fusion and fusion tuning.

The decoder searches over frame-level alignment prefixes, maximizing

    sum_t log P(sym_t | frame t)
    + fusion_weight * log P_lm(g | prefix)   per emitted grapheme
    + non_blank_reward                        per emitted grapheme

where a grapheme is "emitted" when the alignment extends the collapsed
string. Prefixes that collapse to the same string with the same trailing
symbol are merged keeping the best score, and the frame-wise argmax path
is always kept alive, so with beam_width=1 and zero fusion terms the
result is exactly the greedy decode and the returned score can never fall
below the greedy path's fused score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctc import wer
from .lm import CharNgramLm
from .seeding import derive_rng
from .tokens import BLANK, Vocabulary, default_vocabulary


@dataclass(frozen=True)
class FusionParams:
    fusion_weight: float = 0.0
    non_blank_reward: float = 0.0
    beam_width: int = 1

    def __post_init__(self):
        if self.fusion_weight < 0:
            raise ValueError("fusion_weight must be >= 0")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


@dataclass
class DecodeResult:
    ids: list[int]
    score: float  # fused objective of the best alignment found
    emitted: int


def fused_path_score(logits: np.ndarray, path: list[int], lm: CharNgramLm | None,
                     fp: FusionParams, vocab: Vocabulary) -> float:
    """Fused objective of one explicit frame-level alignment."""
    logp = _log_softmax_rows(np.asarray(logits, dtype=np.float64))
    score = 0.0
    text = ""
    prev = None
    for t, sym in enumerate(path):
        score += logp[t, sym]
        if sym != BLANK and sym != prev:
            ch = vocab.symbols[sym]
            if lm is not None and fp.fusion_weight != 0.0:
                score += fp.fusion_weight * lm.logp(ch, text)
            score += fp.non_blank_reward
            text += ch
        prev = sym
    return score


def beam_decode_fused(logits, lm: CharNgramLm | None, fp: FusionParams,
                      vocab: Vocabulary | None = None) -> DecodeResult:
    vocab = vocab or default_vocabulary()
    data = logits.data if hasattr(logits, "data") else np.asarray(logits)
    logp = _log_softmax_rows(np.asarray(data, dtype=np.float64))
    num_frames, num_symbols = logp.shape

    # state: (collapsed id tuple, last alignment symbol) -> best path score
    beams: dict[tuple[tuple[int, ...], int | None], float] = {((), None): 0.0}
    greedy_key = ((), None)
    for t in range(num_frames):
        best_sym = int(logp[t].argmax())
        expansions: dict[tuple[tuple[int, ...], int | None], float] = {}
        for (prefix, last), score in beams.items():
            text = None
            for sym in range(num_symbols):
                ns = score + logp[t, sym]
                if sym != BLANK and sym != last:
                    ch = vocab.symbols[sym]
                    if lm is not None and fp.fusion_weight != 0.0:
                        if text is None:
                            text = "".join(vocab.symbols[i] for i in prefix)
                        ns += fp.fusion_weight * lm.logp(ch, text)
                    ns += fp.non_blank_reward
                    key = (prefix + (sym,), sym)
                else:
                    key = (prefix, sym)
                old = expansions.get(key)
                if old is None or ns > old:
                    expansions[key] = ns
        gp, gl = greedy_key
        if best_sym != BLANK and best_sym != gl:
            greedy_key = (gp + (best_sym,), best_sym)
        else:
            greedy_key = (gp, best_sym)
        ranked = sorted(expansions.items(), key=lambda kv: (-kv[1], len(kv[0][0]), kv[0][0]))
        beams = dict(ranked[:fp.beam_width])
        if greedy_key not in beams:
            beams[greedy_key] = expansions[greedy_key]
    best_score = max(beams.values())
    if beams.get(greedy_key) == best_score:
        best_key = greedy_key
    else:
        best_key = min((key for key, sc in beams.items() if sc == best_score),
                       key=lambda key: (len(key[0]), key[0]))
    return DecodeResult(ids=list(best_key[0]), score=float(best_score),
                        emitted=len(best_key[0]))


@dataclass
class FusionTuneResult:
    params: FusionParams
    dev_wer: float
    history: list[tuple[float, float, float]]  # (weight, reward, wer) per trial


def tune_fusion(dev_logits: list, dev_refs: list[str], lm: CharNgramLm,
                trials: int, seed: int, beam_width: int = 4,
                vocab: Vocabulary | None = None) -> FusionTuneResult:
    """Random search for fusion parameters on a decoded dev set.

    Trial 0 is pinned to the no-fusion baseline (0, 0); the remaining
    trials draw fusion_weight from U[0,1] and non_blank_reward from
    U[-1,1]. Returns the earliest trial with minimal dev WER, so the
    result can never be worse than the baseline.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not dev_logits:
        raise ValueError("dev set is empty")
    if len(dev_logits) != len(dev_refs):
        raise ValueError("dev logits and references must align")
    vocab = vocab or default_vocabulary()
    rng = derive_rng("tune-fusion", int(seed))
    candidates = [(0.0, 0.0)]
    for _ in range(trials - 1):
        candidates.append((float(rng.uniform(0.0, 1.0)), float(rng.uniform(-1.0, 1.0))))
    history = []
    best = None
    for weight, reward in candidates:
        fp = FusionParams(fusion_weight=weight, non_blank_reward=reward,
                          beam_width=beam_width)
        hyps = [vocab.decode(beam_decode_fused(lg, lm, fp, vocab).ids)
                for lg in dev_logits]
        rate = wer(dev_refs, hyps)
        history.append((weight, reward, rate))
        if best is None or rate < best[0]:
            best = (rate, fp)
    return FusionTuneResult(params=best[1], dev_wer=best[0], history=history)
