"""pdrlab - physically disentangled representations learned by inverse rendering."""

__version__ = "0.1.0"
