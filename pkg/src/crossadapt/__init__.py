"""Cross-domain adaptation workbench for speaker-verification embeddings.

The package trains a small frame-context embedding network on a synthetic
multi-domain feature corpus in three stages (pretrain, clean fine-tune,
multi-target cross-domain adaptation) and evaluates it with cosine trial
scoring and equal-error-rate reports.
"""

__version__ = "0.1.0"
