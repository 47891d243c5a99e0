"""JELAI middleware: coding telemetry, learner traces, and context-aware LLM tutoring."""

__version__ = "0.1.0"
