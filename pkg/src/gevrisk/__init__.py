"""Extreme-value risk analysis of high-frequency returns."""
