"""Spectrally truncated jump-diffusion evolution equations with pathwise
sensitivities of arbitrary order."""

__version__ = "0.1.0"
