"""Packaged topology files."""
