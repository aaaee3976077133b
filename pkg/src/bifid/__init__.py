"""Bi-fidelity surrogate modeling toolkit.

Trains scalar-output network surrogates from a large low-fidelity dataset
plus a small high-fidelity one, via layer-freezing transfer, output-mapping
transfer, and weighted knowledge distillation from a Gaussian-process
teacher, with GP and co-kriging baselines and a benchmark problem.
"""

__version__ = "0.1.0"
