"""Package with preprocessing and training-pair pipelines."""
