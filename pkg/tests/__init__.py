"""Tests for bonelift."""
