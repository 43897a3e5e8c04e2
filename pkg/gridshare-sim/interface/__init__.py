"""User interface components for terminal output."""
