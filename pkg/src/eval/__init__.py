"""Package with metrics, probes and evaluation protocols."""
