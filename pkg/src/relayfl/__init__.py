"""Relay-assisted over-the-air model aggregation: channels, transceiver
optimization, single-relay analysis, and federated training experiments."""

from . import aggregation, experiment, federated, geometry, optimizer, single_relay

__all__ = ["aggregation", "experiment", "federated", "geometry", "optimizer",
           "single_relay"]
__version__ = "0.1.0"
