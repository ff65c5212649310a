"""Package with tests."""
