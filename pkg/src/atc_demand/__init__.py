"""Graph-attention prediction of upcoming ATC clearances and per-aircraft task demand."""

__version__ = "0.1.0"
