"""Sectional solver, particle oracle and bound diagnostics for continuous
generalized exchange-driven growth."""

__version__ = "0.1.0"
