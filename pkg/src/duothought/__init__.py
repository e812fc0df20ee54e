"""duothought: thought-level CoT importance scoring, cold-start synthesis, and dual-model dialogue."""

__version__ = "0.1.0"
