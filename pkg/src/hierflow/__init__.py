"""Renormalization flow, Markov-chain quadrature and sampling for hierarchical
integer-valued Gaussian fields (DG, sine-Gordon and hard-core Coulomb gas)."""

__version__ = "0.1.0"
