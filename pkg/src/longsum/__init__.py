"""Two-stage multi-document summarization: extractive paragraph ranking
feeding a decoder-only transformer with local and memory-compressed
attention, plus the tokenization, decoding and evaluation machinery
around it.
"""

__version__ = "0.1.0"
