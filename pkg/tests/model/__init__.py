"""Package for network test modules."""
