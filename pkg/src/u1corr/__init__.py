"""Total equal-time correlators and U(1) conservation in open quantum systems."""
