"""SFT and GRPO fine-tuning of binary detectors, with oracles and a synthetic
domain-shift benchmark."""

from .kernels import BACKEND

__version__ = "0.1.0"
