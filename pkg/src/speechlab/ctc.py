"""CTC loss, greedy decoding and word error rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _make, _accum, as_tensor
from .tokens import BLANK


@dataclass
class CtcLossResult:
    loss: Tensor  # scalar; +inf when the target cannot be aligned
    feasible: bool


def _expand_target(target: list[int]) -> list[int]:
    out = [BLANK]
    for t in target:
        out.append(t)
        out.append(BLANK)
    return out


def min_frames_required(target: list[int]) -> int:
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(logits, target) -> CtcLossResult:
    """Negative log probability of the target under all collapsing
    alignments, via the forward recursion in log space.

    An infeasible target (too long for the frame count) yields an infinite
    loss flagged on the result instead of raising.
    """
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ValueError(f"logits must be (T, V), got {logits.shape}")
    target = [int(t) for t in target]
    num_frames, vocab = logits.data.shape
    for t in target:
        if t == BLANK:
            raise ValueError("target must be blank-free")
        if not 0 <= t < vocab:
            raise ValueError(f"target id {t} outside vocabulary of size {vocab}")
    if num_frames < min_frames_required(target):
        return CtcLossResult(loss=Tensor(np.inf), feasible=False)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    labels = _expand_target(target)
    s = len(labels)
    neg_inf = -np.inf

    alpha = np.full((num_frames, s), neg_inf)
    alpha[0, 0] = logp[0, labels[0]]
    if s > 1:
        alpha[0, 1] = logp[0, labels[1]]
    for t in range(1, num_frames):
        for j in range(s):
            best = alpha[t - 1, j]
            if j >= 1:
                best = np.logaddexp(best, alpha[t - 1, j - 1])
            if j >= 2 and labels[j] != BLANK and labels[j] != labels[j - 2]:
                best = np.logaddexp(best, alpha[t - 1, j - 2])
            alpha[t, j] = best + logp[t, labels[j]]
    log_total = alpha[num_frames - 1, s - 1]
    if s > 1:
        log_total = np.logaddexp(log_total, alpha[num_frames - 1, s - 2])
    if not np.isfinite(log_total):
        return CtcLossResult(loss=Tensor(np.inf), feasible=False)

    beta = np.full((num_frames, s), neg_inf)
    beta[num_frames - 1, s - 1] = 0.0
    if s > 1:
        beta[num_frames - 1, s - 2] = 0.0
    for t in range(num_frames - 2, -1, -1):
        for j in range(s):
            best = beta[t + 1, j] + logp[t + 1, labels[j]]
            if j + 1 < s:
                best = np.logaddexp(best, beta[t + 1, j + 1] + logp[t + 1, labels[j + 1]])
            if j + 2 < s and labels[j + 2] != BLANK and labels[j + 2] != labels[j]:
                best = np.logaddexp(best, beta[t + 1, j + 2] + logp[t + 1, labels[j + 2]])
            beta[t, j] = best

    # Posterior over emitted labels per frame; d(loss)/d(logits) = probs - posterior.
    log_gamma = np.full((num_frames, vocab), neg_inf)
    for j, lab in enumerate(labels):
        np.logaddexp(log_gamma[:, lab], alpha[:, j] + beta[:, j] - log_total,
                     out=log_gamma[:, lab])
    grad = np.exp(logp) - np.exp(log_gamma)

    def bw(g, acc):
        _accum(acc, logits, float(g) * grad)

    return CtcLossResult(loss=_make(np.asarray(-log_total), (logits,), bw), feasible=True)


def greedy_decode(logits) -> list[int]:
    """Frame-wise argmax, collapse repeats, drop blanks."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    best = data.argmax(axis=1)
    out = []
    prev = None
    for b in best:
        b = int(b)
        if b != prev and b != BLANK:
            out.append(b)
        prev = b
    return out


def word_edit_distance(ref_words: list[str], hyp_words: list[str]) -> int:
    n, m = len(ref_words), len(hyp_words)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ref_words[i - 1] != hyp_words[j - 1])
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[m]


def wer(refs: list[str], hyps: list[str]) -> float:
    """Corpus word error rate: summed edit distance over summed reference
    word count."""
    if len(refs) != len(hyps):
        raise ValueError(f"got {len(refs)} references but {len(hyps)} hypotheses")
    total_words = sum(len(r.split()) for r in refs)
    if total_words == 0:
        raise ValueError("reference corpus has no words")
    edits = sum(word_edit_distance(r.split(), h.split()) for r, h in zip(refs, hyps))
    return edits / total_words
