"""Crop-type and land-cover mapping from satellite time series or precomputed embeddings."""

__version__ = "0.1.0"
