"""Package with the procedural microscopy data generator."""
