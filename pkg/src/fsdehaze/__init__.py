"""Feature-supervised GAN dehazing toolkit.

Subpackages cover the full pipeline: physical haze synthesis (haze, data),
the encoder-decoder generator and multi-scale discriminator (generator,
discriminator), the four-term training objective (losses, features,
train), and evaluation (metrics). The `fsdehaze` CLI wires them together.
"""

__version__ = "0.1.0"
