"""Utility modules for the EgoLeak toolkit."""
