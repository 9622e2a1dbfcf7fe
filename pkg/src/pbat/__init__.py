"""Gaussian behavior-aware transformer for multi-behavior sequential recommendation."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ModelConfig, load_config, parse_config
from .data import (Interaction, MaskedBatch, MultiBehaviorSequence, SplitDataset, Vocab,
                   build_sequences, cloze_mask, ingest_tsv, leave_one_out_split,
                   make_masked_batch, sample_negative, split_interactions)
from .distributions import (DiagonalGaussian, elu_plus_one, gaussian_aggregate, sagp, tri_sagp,
                            wasserstein_sq)
from .encoder import encode
from .evaluation import evaluate, export_behavior_matrix, hr_at_k, ndcg_at_k, predict_next
from .model import ModelParams, init_params
from .synth import SynthConfig, synth_generate
from .training import AdamState, adam_step, backward, cloze_loss, fit, grad_check

__version__ = "0.1.0"
