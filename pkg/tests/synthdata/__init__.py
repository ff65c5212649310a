"""Package for synthetic data test modules."""
