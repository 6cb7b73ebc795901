"""Nonparametric clustering with a learned E-step and split/merge moves."""

__version__ = "0.1.0"
