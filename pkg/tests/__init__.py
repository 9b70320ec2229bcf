"""Tests for memwall."""
