"""Package for store test modules."""
