"""Conditional flow matching trainer for the channel-estimation engine.

Consumes `.rcds` channel datasets, trains a small time-conditioned network on
the linear clean-to-noisy path, and exports EMA weights in the engine's graph
weight-file format together with parity fixtures.
"""

__version__ = "0.1.0"
