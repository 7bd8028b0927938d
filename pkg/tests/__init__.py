"""Test suite for pddkit."""
