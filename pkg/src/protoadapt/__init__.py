"""Frozen-backbone continual depth completion with per-domain prototype sets."""

__version__ = "0.1.0"
