"""Quasi-probability inversion of synchronization channels."""
