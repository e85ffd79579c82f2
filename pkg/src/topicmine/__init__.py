"""Topic mining toolkit for review-style corpora.

Pipeline: preprocess text into an id-encoded corpus, train a small
masked-language-model encoder for contextual token/document vectors,
fit LDA by collapsed Gibbs sampling, pick the topic count by held-out
perplexity, score topics with co-occurrence coherence metrics, and
project fused document vectors to 2D with exact t-SNE.
"""

from topicmine.errors import ConfigError, InputError, NumericalError, TopicmineError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "InputError",
    "NumericalError",
    "TopicmineError",
    "__version__",
]
