"""Package with flow-matching, training and timelapse modules."""
