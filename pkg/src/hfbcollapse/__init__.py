"""Angular-momentum-sector HF/HFB dynamics for pseudo-relativistic fermions."""

__version__ = "0.1.0"
