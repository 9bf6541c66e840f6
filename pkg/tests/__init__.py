"""Tests for bnmr.

Builders shared across modules live in ``tests.conftest``; end-to-end runs are
marked ``slow``.
"""
