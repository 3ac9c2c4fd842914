"""Assertion-guided verification of compiled sandbox binaries, with a
bounty protocol for outsourcing the constraint solving."""

__version__ = "0.1.0"
