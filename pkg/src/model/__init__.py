"""Package with the velocity-prediction network."""
