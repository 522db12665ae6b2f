"""Ontology-constrained knowledge graphs from regulatory disclosure documents.

Three stages: TOC-driven segmentation of a page bundle, schema-guided
extraction through a pluggable completion backend, and two-phase
validation, followed by quality and cost metrics.
"""

from .ontology import SCHEMA, EntityKind, MetricSubtype, OntologySchema, Predicate
from .model import Entity, KnowledgeGraph, Provenance, Relationship, Stage

__version__ = "0.1.0"

__all__ = [
    "SCHEMA",
    "Entity",
    "EntityKind",
    "KnowledgeGraph",
    "MetricSubtype",
    "OntologySchema",
    "Predicate",
    "Provenance",
    "Relationship",
    "Stage",
    "__version__",
]
