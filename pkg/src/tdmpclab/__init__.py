"""Desk-scale latent MPC with policy-constrained value learning."""

__version__ = "0.1.0"
