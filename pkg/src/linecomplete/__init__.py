"""Desk-scale whole-line code completion engine.

Pipeline: ingest/split a toy-language corpus, lex and normalize it into
subtoken streams, learn a BPE vocabulary, model the id sequences with an
n-gram baseline or a small generative transformer, beam-decode whole-line
suggestions, cache them in client-side tries with logistic early stopping,
and evaluate with perplexity, ROUGE-L and edit similarity.
"""

__version__ = "0.1.0"
