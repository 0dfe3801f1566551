"""Area-preserving annulus maps without interior compact invariant sets."""

__version__ = "0.1.0"
