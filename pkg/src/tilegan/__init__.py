"""Large-scale texture synthesis by tiling and optimizing generator latent fields."""

__version__ = "0.1.0"
