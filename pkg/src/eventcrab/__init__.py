"""Event-camera action recognition with spiking context sampling and Hilbert-scan spiking SSMs."""

__version__ = "0.1.0"
