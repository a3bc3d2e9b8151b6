"""Bits-back coding with asymmetric numeral systems.

Modules: ``rans`` (scalar coder), ``vrans`` (vectorized lanes), ``codecs``,
``discretize``, ``models``, ``bbans`` (batch protocols), ``container`` and ``cli``.
"""
from .bbans import (CodingConfig, FallbackWarmup, InsufficientInitBits, RandomBits, RateReport,
                    decode_batch, encode_batch, init_random_bits, min_init_bits)
from .rans import Message, Precisions, UnderflowError, m_init, pop, push
from .vrans import VMessage, vinit

__version__ = "0.1.0"

__all__ = ["CodingConfig", "FallbackWarmup", "InsufficientInitBits", "RandomBits", "RateReport",
           "decode_batch", "encode_batch", "init_random_bits", "min_init_bits", "Message",
           "Precisions", "UnderflowError", "m_init", "pop", "push", "VMessage", "vinit"]
