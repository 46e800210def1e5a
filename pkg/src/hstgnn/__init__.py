"""Desk-scale hierarchical spatio-temporal graph network for sign-language transduction."""

__version__ = "0.1.0"
