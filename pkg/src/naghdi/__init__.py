"""Damped Naghdi shell toolkit."""
