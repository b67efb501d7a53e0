"""Online continual learning with meta-learned sample importance."""
