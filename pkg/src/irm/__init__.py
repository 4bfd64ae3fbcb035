"""Insider risk management engine.

Rule-based and autoencoder session risk scoring over CERT-style activity
logs, windowed security policies with simulated actions, an append-only
event store, and an HTTP API for alert triage with analyst feedback.
"""

__version__ = "0.1.0"
