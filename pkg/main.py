#!/usr/bin/env python3
"""Main entry point for the ADEPT CLI."""

from adept_agent.cli import cli

if __name__ == '__main__':
    cli()
