"""loopscope-exporter: bridge HuggingFace models into loopscope's file formats."""

from .formats import ExportRecord, read_token_records, write_corpus_files, write_tensor
from .jobs import ExportJob
from .masking import derive_seed, mask_positions, passage_mask_rng

__version__ = "0.1.0"
