"""Exact verification engine for Frobenius manifolds, open WDVV solutions,
calibrations, descendent potentials and (open) Virasoro constraints."""

__version__ = "0.1.0"
