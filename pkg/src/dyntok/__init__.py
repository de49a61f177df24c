"""Entropy-guided dynamic tokenization engine with vocabulary curriculum loops."""

from .vocab import Token, Vocabulary, VocabularyError, init_base, add, reduce
from .codec import TokenStream, build_trie, encode, encode_batched, decode
from .entropy import EntropyTrace, NgramModel, fit_ngram, entropy_trace, nll_trace
from .merge import MergeConfig, MergeCandidate, is_mergeable, find_candidates
from .metrics import BpcReport, bpc_report, fit_slope, improvement_table
from .curriculum import CurriculumConfig, StageRecord, run_curriculum

__version__ = "0.1.0"

__all__ = [
    "Token",
    "Vocabulary",
    "VocabularyError",
    "init_base",
    "add",
    "reduce",
    "TokenStream",
    "build_trie",
    "encode",
    "encode_batched",
    "decode",
    "EntropyTrace",
    "NgramModel",
    "fit_ngram",
    "entropy_trace",
    "nll_trace",
    "MergeConfig",
    "MergeCandidate",
    "is_mergeable",
    "find_candidates",
    "BpcReport",
    "bpc_report",
    "fit_slope",
    "improvement_table",
    "CurriculumConfig",
    "StageRecord",
    "run_curriculum",
]
