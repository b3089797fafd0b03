"""fedsilo: federated training simulator with silo-local BN statistics."""

__version__ = "0.1.0"
