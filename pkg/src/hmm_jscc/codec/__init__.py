from .bch import LinearBlockCode, build_shortened_code, minimum_distance
from .codebook import (
    Codebook,
    ConditionalCodebook,
    Scheme,
    build_codebook,
    codebook_csv,
    encode,
)
from .huffman import HuffmanCode, huffman_build

__all__ = [
    "Codebook",
    "ConditionalCodebook",
    "HuffmanCode",
    "LinearBlockCode",
    "Scheme",
    "build_codebook",
    "build_shortened_code",
    "codebook_csv",
    "encode",
    "huffman_build",
    "minimum_distance",
]
