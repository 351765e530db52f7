"""Benchmark framework for layer-local (goodness-based) training versus
backpropagation on self-supervised pretext tasks over small image datasets.

Modules:
  core        numerics: seeded rng substreams, Adam, normalization, softplus
  datasets    download/verify/parse mnist, fmnist, cifar10, svhn; subsetting
  tasks       pretext transforms, label embedding, pos/neg batch construction
  ff          layer-local greedy training with goodness losses
  bp          backprop baselines (cross-entropy head, goodness last/all)
  evaluation  slow goodness-scan inference, linear probes, transfer protocol
  analysis    activation export and exact t-SNE
  checkpoint  FFCK binary network serialization
  config      declarative experiment configs (JSON, versioned schema)
  cli         fetch / train / probe / evaluate / embed / report subcommands
"""

from .core import AdamState, Rng, ShapeError, adam_step, l2_normalize, sigmoid, softplus
from .datasets import ImageDataset, load_dataset, make_subset
from .tasks import TaskSpec, task_spec, make_task_batch, make_unsupervised_batch
from .ff import FFLayer, FFNetwork, FFTrainConfig, goodness, layer_loss, train_ff, train_unsupervised_ff
from .bp import BPNetwork, BPTrainConfig, train_bp
from .evaluation import (
    EvalReport,
    LinearProbe,
    extract_features,
    per_layer_accuracy,
    predict_slow,
    run_transfer_experiment,
    train_linear_probe,
)
from .analysis import Embedding2D, EmbeddingJob, emit_embedding_csv, export_activations, tsne
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Rng",
    "ShapeError",
    "adam_step",
    "l2_normalize",
    "sigmoid",
    "softplus",
    "ImageDataset",
    "load_dataset",
    "make_subset",
    "TaskSpec",
    "task_spec",
    "make_task_batch",
    "make_unsupervised_batch",
    "FFLayer",
    "FFNetwork",
    "FFTrainConfig",
    "goodness",
    "layer_loss",
    "train_ff",
    "train_unsupervised_ff",
    "BPNetwork",
    "BPTrainConfig",
    "train_bp",
    "EvalReport",
    "LinearProbe",
    "extract_features",
    "per_layer_accuracy",
    "predict_slow",
    "run_transfer_experiment",
    "train_linear_probe",
    "Embedding2D",
    "EmbeddingJob",
    "emit_embedding_csv",
    "export_activations",
    "tsne",
    "load_checkpoint",
    "save_checkpoint",
    "ExperimentConfig",
    "__version__",
]
