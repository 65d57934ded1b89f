"""ADEPT - agentic speech-emotion reasoning with ambiguity-preserving labels and auditable evidence."""

__version__ = "0.1.0"
