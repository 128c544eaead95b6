"""Stochastic simulator and mean-field solver for answer generation,
replication and reinforcement across Web, training-set, search-engine and
LLM compartments, plus a Q&A dump answer-lag analyzer."""

__version__ = "0.1.0"
