"""Masked-patch self-supervised pre-training for point clouds.

A desk-scale, fully testable pipeline: FPS + KNN patchification, random patch
masking, a compact local-aggregation encoder, a masked-query decoder that
never sees masked-patch coordinates, and dual (relative-coordinate + center)
Chamfer reconstruction -- plus the conventional masked-token decoder baseline,
transfer tasks (classification, completion), and exact parameter/FLOP
accounting. Everything runs on a self-contained float64 numpy autodiff.
"""

from .config import ModelConfig, OptimizerConfig, reference_config, tiny_config, toy_config
from .geometry import (PatchSet, PointCloud, chamfer_l1, chamfer_l2,
                       farthest_point_sample, knn_group, normalize)
from .gradcheck import GradCheckReport, grad_check
from .masking import MaskPartition, embed_position, embed_semantic, initial_features, make_mask
from .pretrain import (PretrainModel, TrainState, init_pretrain_model, pretrain_loss,
                       pretrain_run, train_step)
from .downstream import CompletionRequest, complete, finetune_classify
from .costs import count_costs, count_params_enumerated, transformer_baseline_report
from .checkpoint import load_checkpoint, restore_classifier, restore_pretrain, save_checkpoint
from .ablation import masked_data_isolation, run_ablation
from .synth import synth_cloud, synth_dataset
from .tensor import DiffTensor, Parameter, no_grad

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "OptimizerConfig", "reference_config", "tiny_config", "toy_config",
    "PatchSet", "PointCloud", "chamfer_l1", "chamfer_l2", "farthest_point_sample",
    "knn_group", "normalize",
    "GradCheckReport", "grad_check",
    "MaskPartition", "embed_position", "embed_semantic", "initial_features", "make_mask",
    "PretrainModel", "TrainState", "init_pretrain_model", "pretrain_loss",
    "pretrain_run", "train_step",
    "CompletionRequest", "complete", "finetune_classify",
    "count_costs", "count_params_enumerated", "transformer_baseline_report",
    "load_checkpoint", "restore_classifier", "restore_pretrain", "save_checkpoint",
    "masked_data_isolation", "run_ablation",
    "synth_cloud", "synth_dataset",
    "DiffTensor", "Parameter", "no_grad",
]
