"""Tensor core, models and linear theory"""
