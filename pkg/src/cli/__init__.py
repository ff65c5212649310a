"""Package with cli modules."""
