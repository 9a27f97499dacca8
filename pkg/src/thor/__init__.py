"""Truncated-horizon policy search with oracle-based cost shaping."""
