"""Dual-modal photoacoustic/ultrasound simulation and reconstruction engine."""

__version__ = "0.1.0"
