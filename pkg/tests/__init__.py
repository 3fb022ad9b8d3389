"""Test suite for the Boussinesq lab."""
