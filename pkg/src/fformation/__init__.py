"""Conversational group (F-formation) detection from learned pairwise affinities."""

__version__ = "0.1.0"
