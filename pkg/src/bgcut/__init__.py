"""bgcut: portrait video background cut.

Two-path segmentation with global background attenuation on a pruned ResNet backbone,
spatial-temporal refinement, and the tooling to train, evaluate and composite with it.
"""

__version__ = "0.1.0"
__author__ = "bgcut developers"

# Package metadata
__all__ = ["__version__", "__author__"]
