"""CPU-only binary segmentation of vein walls with hand-written gradients.

Submodules are imported explicitly (``veinseg.model``, ``veinseg.trainer``,
...) to keep CLI startup free of numpy until thread limits are applied.
"""

__version__ = "0.1.0"
