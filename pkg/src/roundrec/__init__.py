"""roundrec: multi-round candidate retrieval for sequential recommendation.

The retriever runs several forward passes per user. Each round adapts the
item-history representation with feedback from previously retrieved items
(spectral filter + context attention) and fuses the running user vector with
the vectors of earlier rounds (context GRU + MLP), then retrieves its share of
the final top-K list.
"""

__version__ = "0.1.0"
