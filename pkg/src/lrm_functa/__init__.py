"""Low-rank modulated coordinate networks for video, with phase readout."""

__version__ = "0.1.0"
