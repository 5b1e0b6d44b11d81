"""Heat-kernel regularized optimal transport on finite metric measure spaces."""
__version__ = "0.1.0"
