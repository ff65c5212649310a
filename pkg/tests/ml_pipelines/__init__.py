"""Package for preprocessing test modules."""
