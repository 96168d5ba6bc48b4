"""Two-stage multi-entity knowledge transfer (MKT) for CTR prediction.

Stage 1 pre-trains a Multi-Entity Model (MEM) on mixed source/target
samples with heterogeneous feature alignment, a PLE-style common knowledge
extractor, and a polarized distribution loss. Stage 2 fine-tunes a Target
Entity Model (TEM) that plugs the frozen MEM's knowledge vectors through
GLU gates. Everything runs on the package's own autodiff engine.
"""

from . import datasynth, features, hfa, mem, metrics, tem, tensorgrad

__all__ = ["datasynth", "features", "hfa", "mem", "metrics", "tem", "tensorgrad"]

__version__ = "0.1.0"
