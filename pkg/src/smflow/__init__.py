"""smflow: layered optical-flow estimation with a soft-mask output head.

A self-contained desk-scale stack: float64 autodiff engine, soft-mask
head (masks + intermediate flows, channel maxout, fusion), a small
encoder-decoder flow network, supervised and unsupervised losses,
synthetic layered-motion data with exact ground truth, and an
experiment harness (ablation, k-sweep, 1-D piecewise-fit demo).
"""

__version__ = "0.1.0"
