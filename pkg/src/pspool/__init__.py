"""Precomputed structural mesh pooling with graph-attention models.

The package splits into an offline stage that turns raw triangle meshes
into multi-level pooling structures (`mesh`, `hierarchy`,
`correspondence`, `operators`, `precompute`) and an online stage that
trains attention-based autoencoders and classifiers on top of them
(`autodiff`, `layers`, `models`, `training`). `synth` and `manifest`
provide a small self-contained shape corpus; `cli` wires everything
into the `pspool` command.
"""

from .errors import PspoolError
from .hierarchy import MeshHierarchy, build_hierarchy
from .manifest import DatasetManifest, make_label_subsets
from .mesh import Mesh, canonicalize, load_mesh, save_off, validate_mesh
from .models import GraphBundle, ModelConfig
from .operators import SparseOperator, pool_max, pool_mean, spmm, unpool
from .precompute import build_graph_bundle, bundle_from_psph, run_precompute
from .synth import synth_dataset
from .training import (
    MetricsRecord,
    TrainConfig,
    export_embeddings,
    run_pretrain,
    run_probe,
    run_supervised,
)

__version__ = "0.1.0"

__all__ = [
    "PspoolError",
    "Mesh",
    "canonicalize",
    "load_mesh",
    "save_off",
    "validate_mesh",
    "MeshHierarchy",
    "build_hierarchy",
    "SparseOperator",
    "spmm",
    "pool_mean",
    "pool_max",
    "unpool",
    "GraphBundle",
    "ModelConfig",
    "build_graph_bundle",
    "bundle_from_psph",
    "run_precompute",
    "DatasetManifest",
    "make_label_subsets",
    "synth_dataset",
    "TrainConfig",
    "MetricsRecord",
    "run_pretrain",
    "run_probe",
    "run_supervised",
    "export_embeddings",
    "__version__",
]
