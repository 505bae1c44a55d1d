"""Time-fractional reaction-diffusion equations: forward solvers, positivity
audits and reconstruction of the reaction coefficient."""

from __future__ import annotations

__version__ = "0.1.0"
