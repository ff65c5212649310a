"""Package with on-disk formats: tensors, datasets, checkpoints and images."""
