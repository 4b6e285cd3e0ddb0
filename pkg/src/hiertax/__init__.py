"""Taxonomy-aware two-stage hierarchical multi-label text classification."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .coarse import CoarseParams, coarse_forward, coarse_loss, coarse_predict
from .corpus import Record, SyntheticSpec, Vocab, generate_synthetic, read_corpus, split, tokenize, write_corpus
from .encoder import Encoder, EncoderConfig, load_precomputed, write_precomputed
from .errors import (
    CheckpointError,
    FingerprintMismatch,
    HiertaxError,
    IngestionError,
    ShapeError,
    TaxonomyParseError,
    TrainingDiverged,
    ValidationError,
)
from .fine import FineParams, coarse_guidance, fine_forward, fine_loss, fine_predict, flat_forward
from .metrics import EvalReport, LabelCounts, accumulate, bucketed_macro, macro, micro
from .model import HierarchicalClassifier, TrainConfig, predict_one
from .regularizers import LossWeights, derive_fine_distribution, distribution_loss, similarity_loss, total_loss
from .taxonomy import LabelSpace, Taxonomy, TaxonomyDag, build_connection_matrix, derive_dag_from_connections, load_taxonomy
from .tensor import Tensor, backward, grad_check
from .trainer import StageTrainer, train_coarse, train_fine

__version__ = "0.1.0"
