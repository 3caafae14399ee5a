"""Zero-shot semantic segmentation on a synthetic feature world.

A class-conditioned moment-matching generator turns class embeddings into
pixel features for classes that have no labelled pixels; a per-pixel linear
classifier is then trained on real seen-class and generated unseen-class
features.
"""
from zs3.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
