"""Test suite for Personal SSH/SCP CLI."""
