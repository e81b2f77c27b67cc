"""Storage-efficient archives of visual-token grids.

Packs grids of discrete codebook indices into a compact, random-access,
Huffman-compressed archive, and decodes them through a deterministic
token-augmentation pipeline and stem adapter into model-ready tensors.
"""

from .adapter import StemAdapter, init_adapter, load_adapter, save_adapter, stem_backward, stem_forward
from .archive import (
    StorageReport,
    TokenArchive,
    open_archive,
    read_codebook_file,
    read_labels_file,
    read_raw_tokens,
    write_archive,
    write_codebook_file,
    write_labels_file,
    write_raw_tokens,
)
from .augment import AugmentConfig
from .codebook import (
    Codebook,
    PopularityPermutation,
    SynonymTable,
    build_synonyms,
    quantize,
    rank_by_popularity,
)
from .codec import (
    EncodedRecord,
    HuffmanTable,
    decode_image,
    encode_image,
    entropy,
    escape_decode,
    escape_encode,
    huffman_build,
    huffman_decode,
    huffman_encode,
)
from .errors import (
    ConfigError,
    CorruptionError,
    FormatError,
    InputError,
    StokError,
    TruncationError,
)
from .pipeline import Batch, PipelineConfig, TokenPipeline

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "Batch",
    "Codebook",
    "ConfigError",
    "CorruptionError",
    "EncodedRecord",
    "FormatError",
    "HuffmanTable",
    "InputError",
    "PipelineConfig",
    "PopularityPermutation",
    "StemAdapter",
    "StokError",
    "StorageReport",
    "SynonymTable",
    "TokenArchive",
    "TokenPipeline",
    "TruncationError",
    "build_synonyms",
    "decode_image",
    "encode_image",
    "entropy",
    "escape_decode",
    "escape_encode",
    "huffman_build",
    "huffman_decode",
    "huffman_encode",
    "init_adapter",
    "load_adapter",
    "open_archive",
    "quantize",
    "rank_by_popularity",
    "read_codebook_file",
    "read_labels_file",
    "read_raw_tokens",
    "save_adapter",
    "stem_backward",
    "stem_forward",
    "write_archive",
    "write_codebook_file",
    "write_labels_file",
    "write_raw_tokens",
]
