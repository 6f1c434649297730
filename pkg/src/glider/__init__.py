"""Multi-scale (global semantic + local token-level) routing over a pool of LoRA experts."""

__version__ = "0.1.0"
