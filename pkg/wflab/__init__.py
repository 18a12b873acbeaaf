"""Large-deviation laboratory for the finite-allele Wright-Fisher diffusion."""

__version__ = "0.1.0"
