"""Natural-language-inference privacy policy checker (Python bindings)."""

from _nlicheck import (
    Predictor,
    Sentence,
    Vocabulary,
    class_order,
    extract_text,
    segment_sentences,
    softmax,
    tokenize,
    verdict,
)

__all__ = [
    "Predictor",
    "Sentence",
    "Vocabulary",
    "class_order",
    "extract_text",
    "segment_sentences",
    "softmax",
    "tokenize",
    "verdict",
]
