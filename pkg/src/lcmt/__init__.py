"""
Length- and complexity-constrained neural machine translation

A small numpy transformer with four ways of telling the decoder how long the
output should be, constrained greedy/beam search, and synthetic parallel
corpora on which content preservation can be measured exactly.
"""

from .decode import Constraint, Translator, beam_search, greedy_decode
from .model import LengthMode, ModelConfig, TransformerModel
from .synthetic import SyntheticSpec, synth_generate

__all__ = [
    'Constraint',
    'LengthMode',
    'ModelConfig',
    'SyntheticSpec',
    'TransformerModel',
    'Translator',
    'beam_search',
    'greedy_decode',
    'synth_generate',
]
__version__ = '1.0.0'
