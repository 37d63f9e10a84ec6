"""Federated knowledge-graph embedding simulator with relation-table
aggregation, secure aggregation, a reconstruction attack and link-prediction
evaluation."""

__version__ = "0.1.0"
