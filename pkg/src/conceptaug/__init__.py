"""Concept-augmented clinical coding: data, annotator, models, metrics and experiments."""

__version__ = "0.1.0"
