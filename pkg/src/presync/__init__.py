"""presync: verification and synthesis of synchronization for concurrent
while-programs via bounded-commutation language inclusion."""

__version__ = "0.1.0"
