"""Unit tests for main CLI module."""

