"""Subword modeling for zero-resource speech: VTLN, correspondence autoencoders, multilingual bottleneck
features, and the evaluation tools to compare them.

Submodules are imported on demand so that thread limits can be applied first.
"""

__version__ = "0.1.0"
