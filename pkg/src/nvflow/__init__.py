"""Open-system dynamics of an NV electron qubit with controllable nuclear dephasing channels."""

__version__ = "0.1.0"
