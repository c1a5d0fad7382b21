"""Primitive-based 3D building modelling from height maps."""
__version__ = "0.1.0"
