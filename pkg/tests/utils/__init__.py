"""Package with utils tests."""
