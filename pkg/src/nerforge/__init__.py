"""nerforge: build a judged, BIO-labelled NER corpus from a wiki dump."""

__version__ = "0.1.0"
