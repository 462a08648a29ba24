"""Contrastive representation learning over commonsense knowledge graphs.

Pipeline: convert (head, relation, tail) triples into premise/alternative
text pairs via relation templates, train a text encoder with a
multi-alternative contrastive loss, then evaluate by zero-shot
multiple-choice QA, inductive completion ranking, and nearest-alternative
retrieval.
"""

from .templates import Relation, TemplateRegistry, builtin_registry, load_registry, substitute_persons
from .triples import (
    Entity,
    Graph,
    PremiseGroup,
    SequencePair,
    Triple,
    convert_graph,
    group_by_premise,
    load_triples,
    triple_to_pairs,
)
from .sampling import Batch, TrainExample, make_batches, sample_candidates
from .losses import LossConfig, info_nce, multi_alternative_loss, select_hard_positive, similarity
from .encoders import (
    TinyEncoder,
    TokenSequence,
    build_encoder,
    encoder_fingerprint,
    load_checkpoint,
    pool,
    save_checkpoint,
)
from .training import TrainConfig, TrainResult, evaluate_valid_loss, train
from .evaluation import (
    EvalConfig,
    QAItem,
    RankingQuery,
    RankingResult,
    RetrievalIndex,
    build_index,
    ckgc_evaluate,
    evaluate_qa,
    load_index,
    predict_choice,
    rank_gold,
    render_copa,
    save_index,
    top_k,
)

__version__ = "0.1.0"
