"""Chain CRF sequence tagger with carrier-state label induction.

The package trains and applies first-order, second-order and pre-induced
linear-chain CRF taggers over IOB2 labels. The pre-induced variant
rewrites outside runs into entity-typed carrier states before training,
which lets a first-order model remember entity identity across long
outside gaps at a small extra cost per iteration.
"""

from .corpus import (
    Chunk,
    CorpusError,
    LabelError,
    ParseError,
    Sentence,
    SynthConfig,
    Token,
    extract_chunks,
    generate_synthetic,
    identity_rule,
    read_conll,
    rotation_rule,
    validate_iob2,
    write_conll,
)
from .crf import (
    CrfError,
    ForwardBackwardResult,
    InfeasibleLatticeError,
    Lattice,
    build_lattice,
    compile_sentence,
    encode_gold_states,
    expand_second_order,
    forward_backward,
    log_likelihood_and_gradient,
    state_space,
    total_parameters,
    viterbi,
)
from .crf_types import ModelOrder
from .evaluation import (
    EvaluationError,
    ExperimentReport,
    LongDistanceReport,
    ScoreReport,
    chance_level,
    run_comparison,
    run_longdistance,
    score,
    second_entity_accuracy,
)
from .features import (
    FeatureError,
    FeatureIndex,
    TemplateConfig,
    build_feature_index,
    extract_features,
    normalize_token,
)
from .induction import (
    AlphabetError,
    LabelAlphabet,
    build_expanded_alphabet,
    count_new_states,
    induce,
    revert,
    state_count_report,
)
from .model_io import Model, ModelFormatError, load_model, save_model
from .training import (
    TimingReport,
    TrainConfig,
    TrainReport,
    TrainingError,
    measure_iteration_cost,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "CorpusError",
    "CrfError",
    "EvaluationError",
    "ExperimentReport",
    "FeatureError",
    "FeatureIndex",
    "ForwardBackwardResult",
    "InfeasibleLatticeError",
    "LabelAlphabet",
    "LabelError",
    "Lattice",
    "LongDistanceReport",
    "Model",
    "ModelFormatError",
    "ModelOrder",
    "ParseError",
    "ScoreReport",
    "Sentence",
    "SynthConfig",
    "TemplateConfig",
    "TimingReport",
    "Token",
    "TrainConfig",
    "TrainReport",
    "TrainingError",
    "AlphabetError",
    "build_expanded_alphabet",
    "build_feature_index",
    "build_lattice",
    "chance_level",
    "compile_sentence",
    "count_new_states",
    "encode_gold_states",
    "expand_second_order",
    "extract_chunks",
    "extract_features",
    "forward_backward",
    "generate_synthetic",
    "identity_rule",
    "induce",
    "load_model",
    "log_likelihood_and_gradient",
    "measure_iteration_cost",
    "normalize_token",
    "read_conll",
    "revert",
    "rotation_rule",
    "run_comparison",
    "run_longdistance",
    "save_model",
    "score",
    "second_entity_accuracy",
    "state_count_report",
    "state_space",
    "total_parameters",
    "train",
    "validate_iob2",
    "viterbi",
    "write_conll",
]
