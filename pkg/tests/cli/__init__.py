"""Package for cli test modules."""
