"""Desk-scale simulator for a virtualized-PMU wide area measurement system.

The package models the full chain from emulated phasor measurement units
through virtual objects, composite aggregation, a topic-based broker and a
byte-accurate transport layer, up to a linear WLS state estimator, with a
CLI for bandwidth, latency and estimation experiments.
"""

__version__ = "0.1.0"
