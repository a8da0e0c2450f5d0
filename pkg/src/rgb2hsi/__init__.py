"""RGB to 31-band spectral reconstruction with a conditional UNet/PatchGAN."""

__version__ = "0.1.0"
