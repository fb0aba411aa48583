"""Compare image-derived perceived urban attractiveness with mapped reports."""

__version__ = "0.1.0"
