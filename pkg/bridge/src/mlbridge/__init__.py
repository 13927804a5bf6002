"""Back-end bridge: hosts model adapters behind the detection wire protocol."""

__version__ = "0.1.0"
