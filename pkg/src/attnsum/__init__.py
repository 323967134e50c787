"""Abstractive sentence summarization at desk scale.

A conditional neural language model over headline/article pairs with three
interchangeable input encoders (bag-of-words, time-delay convolutional,
attention), SGD training, beam-search decoding with optional extractive
restriction, a MERT-tuned log-linear feature layer, and a recall-oriented
ROUGE harness. Entry point: the `attnsum` command line tool.
"""

__version__ = "0.1.0"

MODEL_FORMAT_VERSION = 1
CORPUS_FORMAT_VERSION = 1
