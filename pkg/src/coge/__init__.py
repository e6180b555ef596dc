"""Contrastive explanations for graph classifiers via optimal transport."""

from .explain import (
    ContrastEmbeddings,
    ContrastSets,
    ExplainConfig,
    ExplanationResult,
    ablation_variants,
    coge_loss,
    explain_coge,
    explain_occlusion,
    explain_random,
    explain_sensitivity,
    select_contrast_sets,
)
from .evaluate import EvalConfig, MethodReport, evaluate_method, explanation_accuracy
from .gnn import EmbeddingSet, GcnModel, TrainConfig, forward, input_gradient, train
from .graphs import Dataset, GeneratorConfig, Graph, generate_cycliq, load_dataset, save_dataset
from .transport import (
    TransportProblem,
    TransportResult,
    cost_matrix,
    exact_ot,
    marginal_gradient,
    sinkhorn,
    sinkhorn_divergence,
)

__all__ = [
    "ContrastEmbeddings",
    "ContrastSets",
    "Dataset",
    "EmbeddingSet",
    "EvalConfig",
    "ExplainConfig",
    "ExplanationResult",
    "GcnModel",
    "GeneratorConfig",
    "Graph",
    "MethodReport",
    "TrainConfig",
    "TransportProblem",
    "TransportResult",
    "ablation_variants",
    "coge_loss",
    "cost_matrix",
    "evaluate_method",
    "exact_ot",
    "explain_coge",
    "explain_occlusion",
    "explain_random",
    "explain_sensitivity",
    "explanation_accuracy",
    "forward",
    "generate_cycliq",
    "input_gradient",
    "load_dataset",
    "marginal_gradient",
    "save_dataset",
    "select_contrast_sets",
    "sinkhorn",
    "sinkhorn_divergence",
    "train",
]
