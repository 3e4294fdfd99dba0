"""Utility helpers for nlpmix."""
