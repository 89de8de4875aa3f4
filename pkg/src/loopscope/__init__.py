"""loopscope: diagnostics for repetitive-loop text degeneration.

Detect verbatim loops in generated token sequences, simulate decoding
strategies over any probability source, measure hidden-state deviation with
exact radius-neighbor counts, and run loop-inducingness and masked-likelihood
protocols, all against file-based traces or the built-in toy LM.
"""

from .trace import (
    Corpus,
    CorpusEntry,
    CorpusError,
    CorpusLoadError,
    Passage,
    StateTrace,
    TensorFormatError,
    load_corpus,
    read_state_file,
    write_corpus,
    write_state_file,
)
from .loopdetect import LoopSpec, detect_loop, loop_rate, rotate_to_sentence_start
from .decode import DecodeConfig, GenerationError, check_distribution, generate, restrict, select
from .toylm import SelfReinforcingLM, sample_real_passages
from .neighborhood import (
    DeviationCurve,
    NeighborhoodConfig,
    NeighborQuery,
    PCAProjection,
    SupportIndex,
    build_support,
    compare_protocol,
    count_neighbors,
    deviation_curve,
    pca_project,
    shuffle_control,
)
from .textmetrics import (
    FileScorer,
    InducingnessReport,
    LikelihoodCurve,
    RougeScore,
    UniformScorer,
    inducingness_repeated,
    inducingness_simple,
    mask_positions,
    masked_likelihood_curve,
    rouge_l,
)
from .seeding import derive_seed, make_rng

__version__ = "0.1.0"
