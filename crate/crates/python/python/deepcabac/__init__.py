"""Python bindings for the DeepCABAC weight codec."""

from ._native import (
    ArithEncoder,
    ContextModel,
    EncodeOptions,
    Tensor,
    build_grid,
    decode_bins,
    decode,
    empirical_entropy,
    encode,
    huffman_bits,
    inspect,
    load,
    quantize,
    save,
    sweep,
)

__all__ = [
    "ArithEncoder",
    "ContextModel",
    "EncodeOptions",
    "Tensor",
    "build_grid",
    "decode_bins",
    "decode",
    "empirical_entropy",
    "encode",
    "huffman_bits",
    "inspect",
    "load",
    "quantize",
    "save",
    "sweep",
]
