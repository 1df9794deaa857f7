"""speechlab: a desk-scale semi-supervised speech recognition laboratory.

Contrastive pre-training of Conformer encoders, CTC fine-tuning with
SpecAugment, noisy student training with confidence filtering, n-gram
shallow fusion and layer-wise representation probing, all on synthetic
deterministic audio and a numpy autodiff core.
"""

from .audio import Spectrogram, Waveform, logmel, synth_utterance
from .augment import AugmentPolicy, apply_specaugment
from .conformer import ConformerConfig, LayerActivations, attention_scores, subsample
from .ctc import ctc_loss, greedy_decode, wer
from .fusion import FusionParams, beam_decode_fused, tune_fusion
from .lm import CharNgramLm, train_char_lm
from .manifest import Manifest, ManifestEntry, read_manifest, write_manifest
from .nst import NstConfig, PseudoLabeledUtterance, filter_by_confidence, mix_batches, pseudo_label
from .optim import EmaState, LrSchedule, OptimizerState, adam_step, ema_update, lr_at
from .pretrain import ContrastiveBatch, MaskSpec, contrastive_loss, masked_forward, sample_masks
from .probe import (MultiLabelHead, average_accuracy, average_precision, eval_map,
                    extract_pooled, select_best, train_mlp_head, train_probe)
from .supervised import AsrModel, TrainSettings, init_asr_model, train_supervised
from .tensor import Tensor, gradients, no_grad
from .tokens import Vocabulary, decode, default_vocabulary, encode as encode_text

__version__ = "0.1.0"
