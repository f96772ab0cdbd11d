"""Offline actor-critic training kernels at desk scale.

Subpackages and modules:

- logtree: log-space weighted sampling tree (compiled or numpy backend)
- nets: dense networks with hand-written gradients, Adam, target copies
- envs: toy continuous-control environments and scripted controllers
- datasets: columnar offline datasets, relabeling, merging, file format
- algos: TD3 / TD3+BC / AWAC / IQL / ASAC losses and the training step
- analysis: estimator bias/variance diagnostics
- cli: batch front-end (gen-data, train, eval, analyze, report)
"""

__version__ = "0.1.0"

from .logtree import BACKEND, LogSumExpTree

__all__ = ["LogSumExpTree", "BACKEND", "__version__"]
