"""Multispectral fusion thermal super-resolution lab.

Subpackages cover the full pipeline: procedural multi-modal scene synthesis,
SE(3) alignment and virtual-viewpoint rendering, a from-scratch fusion SR
network with hand-written backward passes, and training/evaluation tooling.
"""

__version__ = "0.1.0"
