"""Test suite for ADEPT."""

