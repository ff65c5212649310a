"""Package for training and generation test modules."""
