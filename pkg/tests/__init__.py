"""Tests for dtmpc package."""
