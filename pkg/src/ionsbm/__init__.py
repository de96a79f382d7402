"""Trapped-ion spin coupled to an engineered phonon reservoir: chain modes,
reduced Fock-space dynamics and information backflow diagnostics."""

__version__ = "0.1.0"
