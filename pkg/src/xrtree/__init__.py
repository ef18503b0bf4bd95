"""xrtree: hierarchical label-tree training and inference for extreme
multi-label text classification."""

__version__ = "0.1.0"
