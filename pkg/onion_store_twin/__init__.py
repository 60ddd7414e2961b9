"""Digital twin of an IoT-controlled onion storage chamber."""

__version__ = "0.1.0"
