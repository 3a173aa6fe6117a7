"""Drift equilibria, dual envelopes and envelope-constrained NMPC."""
