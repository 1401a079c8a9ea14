"""Desk-scale benchmark for the good-weather bias of a single-shot detector.

Subpackages and modules:

- ``data``: boxes, annotations, manifests and annotation-format parsers
- ``imaging``: Gaussian blurs, synthetic weather corruptions, PPM I/O
- ``scenegen``: procedural labelled traffic scenes
- ``detector``: anchors, multibox loss, the network, training, inference
- ``evaluation``: VOC-style AP/mAP and report tables
- ``pipeline``: the staged bias experiment and its configuration
"""

from ._backend import kernels

__version__ = "0.1.0"
BACKEND = kernels.NAME

__all__ = ["BACKEND", "__version__"]
