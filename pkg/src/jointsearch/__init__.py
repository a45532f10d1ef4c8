"""Joint architecture / pruning / mixed-precision search with a transferable accuracy predictor."""

__version__ = "0.1.0"
