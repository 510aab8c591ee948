"""Concept probes, TCAV bias audits and concept-vector debiasing for embeddings."""

__version__ = "0.1.0"
