"""Tests for the critical-set laboratory."""
