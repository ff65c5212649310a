"""Package with dataset persistence classes."""
