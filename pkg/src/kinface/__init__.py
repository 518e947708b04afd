"""Child-face latent aggregation: augmentation, label maps, codec, MLP, metrics."""

__version__ = "0.1.0"
