"""Multimodal action recognition: RGB clips, skeletons, audio and their fusion."""

__version__ = "0.1.0"
