"""Core models: feeder, prosumers, welfare solver and pricing."""
