"""Learn Lorenz '63 parameters on the fly from partial, sparse and noisy observations by nudging."""
__version__ = "0.1.0"
