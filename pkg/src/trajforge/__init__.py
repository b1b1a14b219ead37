"""Evolutionary search for trajectory-prediction heuristics with an LLM as
the variation operator, plus the evaluation harness around it."""

__version__ = "0.1.0"
