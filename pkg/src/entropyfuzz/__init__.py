"""Entropy-ranked grey-box fuzzing over a suite of in-process targets."""

__version__ = "0.1.0"
