"""Static extraction and classification of relative control-flow-change
features from IA-32 PE executables."""

__version__ = "0.1.0"

from .pe import PeFile, SectionHeader, ExecutableSection, parse_pe, executable_sections
from .entropy import EntropyReport, shannon_entropy, block_entropies, gate
from .disasm import (
    CfcRecord,
    Instruction,
    DecodeResult,
    decode_instruction,
    instruction_length,
    decode_stream,
    classify_cfc,
    data_in_code_filter,
)
from .features import (
    FeatureSet,
    SectionRecords,
    build_feature_set,
    displacement_sequence,
    ngrams,
    histogram,
    frequency_band,
    exclusivity_report,
)
from .stats import SampleStats, CorpusSummary, RhoResult, sample_stats, corpus_summary, spearman_rho, corpus_correlation
from .bayes import TokenMode, BayesModel, Verdict, tokenize, train, classify, evaluate

__all__ = [
    "PeFile", "SectionHeader", "ExecutableSection", "parse_pe", "executable_sections",
    "EntropyReport", "shannon_entropy", "block_entropies", "gate",
    "CfcRecord", "Instruction", "DecodeResult", "decode_instruction",
    "instruction_length", "decode_stream", "classify_cfc", "data_in_code_filter",
    "FeatureSet", "SectionRecords", "build_feature_set", "displacement_sequence",
    "ngrams", "histogram", "frequency_band", "exclusivity_report",
    "SampleStats", "CorpusSummary", "RhoResult", "sample_stats", "corpus_summary",
    "spearman_rho", "corpus_correlation",
    "TokenMode", "BayesModel", "Verdict", "tokenize", "train", "classify", "evaluate",
]
