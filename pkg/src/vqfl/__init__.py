"""Desk-scale vehicular quantum federated learning simulator.

Local variational-quantum-classifier training, weighted federated averaging,
differential-privacy noise on uploads, BB84-keyed parameter encryption and
server-side fine-tuning, all driven from a seeded, reproducible harness.
"""

__version__ = "0.1.0"
