"""Readability-level prediction over a lexicon-enriched heterogeneous graph.

Sentences, lemmas, difficulty classes and academic domains form a typed
graph; a from-scratch hetero-SAGE classifier predicts one of 19 ordinal
readability levels per sentence, optionally late-fused with probabilities
from an external sentence encoder, and max-pooled to document level.
"""

__version__ = "0.1.0"
