"""Federated malicious-user prediction: behaviour scoring, FedAvg training, access gate."""

__version__ = "0.1.0"
