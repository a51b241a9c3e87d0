"""Experiment orchestration: metrics, file formats, configs and the CLI."""
