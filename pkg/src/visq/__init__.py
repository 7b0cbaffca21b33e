"""Instruction-conditioned multi-task vision as token-sequence prediction."""

from .boxes import Box, box_decode, box_encode, box_iou
from .bpe import BpeModel, bpe_decode, bpe_encode, bpe_train
from .data import Codecs, Sample, TaskRatios, build_target, read_manifest, sample_task, write_manifest
from .inference import (
    DecodeConfig,
    DecodeResult,
    aggregate_segmentation,
    beam_search,
    confidence_map,
    run_task,
    sample_sequence,
    select_box,
    select_mask,
)
from .instructions import InstructionCorpus, load_corpus, render, sample_instruction
from .metrics import ap50, bleu4, mean_iou, overall_iou
from .model import CachedDecoder, ModelConfig, Parameters, forward, init_parameters, sequence_loss
from .palette import decode_labels, encode_labels, palette_for_classes
from .scenes import Scene, generate_scene
from .trainer import TrainConfig, train_loop, train_step
from .vocab import BOS, EOS, PAD, VocabLayout, build_layout, to_global, to_local, token_kind
from .vq import PatchCodebook, fit_patch_codebook, vq_decode, vq_encode

__version__ = "0.1.0"
