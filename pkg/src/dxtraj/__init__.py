"""Next-admission diagnosis prediction with bidirectional minimal-GRU
networks: data preparation, training, evaluation, and synthetic cohorts."""

__version__ = "0.1.0"
