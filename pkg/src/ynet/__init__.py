"""Hybrid waveform + spectrogram singing-voice separation on a small numpy autograd."""

__version__ = "0.1.0"
