"""Rateless CV-QKD reconciliation with spinal codes."""

from .channel import RawDataBlock, compute_differences, generate_correlated, recover_side_info
from .codec import (
    CodecConfig, DecodeResult, PassBlock, SpineChain, bubble_decode, compute_spine,
    encode_passes, hash_state, map_symbol, rng_bits,
)
from .protocol import (
    OutcomeRecord, ProtocolParams, capacity, code_rate, crc_tag, derive_params, leakage_bound,
)

__all__ = [
    "CodecConfig", "DecodeResult", "OutcomeRecord", "PassBlock", "ProtocolParams", "RawDataBlock",
    "SpineChain", "bubble_decode", "capacity", "code_rate", "compute_differences", "compute_spine",
    "crc_tag", "derive_params", "encode_passes", "generate_correlated", "hash_state", "leakage_bound",
    "map_symbol", "recover_side_info", "rng_bits",
]
