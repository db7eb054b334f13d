"""Deterministic discrete-event simulator for the orchestration stack."""
