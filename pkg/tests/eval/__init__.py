"""Package for evaluation metric and protocol test modules."""
