"""Blind (no-reference) point cloud quality assessment.

A two-stream dynamic-graph network maps a compressed, colored point cloud
to a quality score: clouds are sliced into partitions, patches are sampled
around distant centroids, per-patch features flow through edge convolutions
over per-layer kNN graphs, the geometry and color streams are fused with
cross-attention, and partition scores are averaged into the cloud score.
Training, gradients (reverse-mode tape) and evaluation are self-contained.
"""

from .autodiff import Tape, Tensor, backward, grad_check
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (CheckpointError, EvalError, GraphError, ManifestError,
                     ParseError, PartitionError, PcqaError, ShapeError,
                     TapeError, TrainError)
from .evaluation import EvalReport, evaluate, kfold_by_reference, plcc, srocc
from .knn import KnnGraph, knn_graph, rebuild_for_layer
from .model import (ModelConfig, ModelParams, forward_pointcloud, init_params,
                    predict)
from .partition import (Partition, Patch, PreprocessConfig, extract_patches,
                        normalize_cloud, partition_cloud, sample_centroids,
                        slice_vertical)
from .pcio import (DatasetManifest, ManifestEntry, PointCloud, load_manifest,
                   load_manifest_file, parse_ply, write_ply)
from .train import AdamState, TrainConfig, adam_step, mse_loss, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "CheckpointError", "DatasetManifest", "EvalError",
    "EvalReport", "GraphError", "KnnGraph", "ManifestEntry", "ManifestError",
    "ModelConfig", "ModelParams", "ParseError", "Partition", "PartitionError",
    "Patch", "PcqaError", "PointCloud", "PreprocessConfig", "ShapeError",
    "Tape", "TapeError", "Tensor", "TrainConfig", "TrainError", "adam_step",
    "backward", "evaluate", "extract_patches", "forward_pointcloud",
    "grad_check", "init_params", "kfold_by_reference", "knn_graph",
    "load_checkpoint", "load_manifest", "load_manifest_file", "mse_loss",
    "normalize_cloud", "parse_ply", "partition_cloud", "plcc", "predict",
    "rebuild_for_layer", "sample_centroids", "save_checkpoint",
    "slice_vertical", "srocc", "train", "write_ply",
]
