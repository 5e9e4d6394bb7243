"""Vial fill-state classifier: ConvNet, training, augmentation and attribution tools."""

__version__ = "0.1.0"
