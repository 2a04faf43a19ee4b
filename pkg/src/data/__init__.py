"""Datasets and schemas"""
