"""Retrieval-augmented decoding engine for encoder-decoder ASR.

Two retrieval stages wrap a pluggable model: sentence-level prompt retrieval
conditions the decoder on similar audio-text pairs before decoding, and
token-level kNN retrieval reshapes the output distribution at every step.
A deterministic toy model, a synthetic benchmark, binary persistence, and a
CER/RTF evaluation stack make the whole pipeline verifiable at desk scale.
"""

from .index import (
    DimensionMismatchError,
    EmptyIndexError,
    FlatIndex,
    FrozenIndexError,
    NeighborSet,
)
from .knn import (
    KnnParams,
    TokenDatastore,
    build_token_datastore,
    interpolate,
    knn_distribution,
    softmax,
)
from .metrics import (
    ErrorCounts,
    EvalReport,
    Normalizer,
    build_report,
    cer,
    levenshtein_align,
    relative_reduction,
)
from .model import (
    EOS_TOKEN,
    START_TOKEN,
    AsrModel,
    AudioSegment,
    EncodeResult,
    StepOutput,
    ToyAsrModel,
    ToyModelConfig,
    Utterance,
    concat_audio,
)
from .pipeline import MODES, DecodeConfig, DecodeResult, decode_greedy, run_batch
from .prompts import (
    PromptPlan,
    SentenceDatastore,
    SentenceEntry,
    build_sentence_datastore,
    pack_prompts,
    pool_mean,
    retrieve_prompts,
)
from .storage import (
    ExportRecord,
    ImportedCorpus,
    import_exports,
    load_datastore,
    read_exports,
    save_datastore,
    write_exports,
)
from .synthetic import Benchmark, make_benchmark

__version__ = "0.1.0"
