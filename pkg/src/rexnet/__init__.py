"""Collaborative filtering from rating sentences, item embeddings and a dual-tower network."""

__version__ = "0.1.0"
