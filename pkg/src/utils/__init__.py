"""Logging, errors, checkpoints, reports and run bookkeeping"""
