"""Clinical trials retrieval laboratory.

Turns unstructured admission notes into search queries via configurable
LLM prompt strategies, retrieves trials with BM25(+RM3), and evaluates
rankings against graded judgments. LLM traffic is cached so every
experiment can be replayed offline.
"""

__version__ = "0.1.0"
