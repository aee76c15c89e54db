"""Sketch-to-3D shape retrieval with a hierarchical multi-view graph encoder.

The pipeline: render-style per-view features enter a view graph built from
camera positions, pass through stacked local/global attention levels with
learned view coarsening, and pool into one shape embedding. A small adapter
maps sketch features into the same space; quadruplet, margin-classifier,
and prototype-alignment losses glue the modalities together. Everything
runs on a minimal reverse-mode autodiff tape over numpy arrays.
"""

from .archive import (
    FeatureArchive,
    load_checkpoint,
    read_archive,
    read_tensors,
    save_checkpoint,
    write_archive,
    write_tensors,
)
from .data import CorpusConfig, Dataset, ShapeItem, SketchItem, Splits, build_corpus, load_corpus, make_splits, save_corpus
from .encoder import (
    AdapterParams,
    EncodeTrace,
    EncoderConfig,
    EncoderParams,
    ShapeEmbedding,
    ViewSet,
    encode_shape,
    global_attention,
    local_attention_weights,
    local_gcn,
    sketch_adapter,
    view_selector,
)
from .errors import (
    ArchiveError,
    ArchiveShapeError,
    BadMagicError,
    ConfigError,
    DimensionError,
    NumericError,
    ProtocolError,
    ShapegraphError,
    TruncatedArchiveError,
    UnlabeledItemError,
)
from .losses import (
    ClassifierWeights,
    PrototypeBank,
    QuadrupletBatch,
    am_softmax_loss,
    quadruplet_loss,
    semantic_loss,
    semantic_loss_batch,
    stage1_objective,
    stage2_objective,
    zeroshot_objective,
)
from .metrics import (
    METRIC_ORDER,
    RetrievalRun,
    compute_metrics,
    cosine_similarities,
    distance_histograms,
    margin_statistic,
    rank_gallery,
    render_metric_table,
)
from .train import (
    Adam,
    ModelSpec,
    ModelState,
    TrainConfig,
    cosine_lr,
    derive_schedule,
    embed_shapes,
    embed_sketches,
    load_model,
    param_digest,
    sample_quadruplets,
    save_model,
    train,
    train_joint,
    train_stage1,
    train_stage2,
    training_bank,
)
from .viewgraph import CameraRig, ViewGraph, build_camera_rig, coarsen_positions, knn_edges, load_rig

__version__ = "0.1.0"
