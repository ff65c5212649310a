"""Package with errors, logging, seeding and report helpers."""
