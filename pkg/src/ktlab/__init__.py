"""Desk-scale knowledge-tracing laboratory.

Histories of graded exercise attempts are rendered as text, a tiny causal
language model is tuned to answer yes/no correctness questions, and the
result is benchmarked against classical tracers under cold-start and
cross-domain protocols.
"""

__version__ = "0.1.0"
