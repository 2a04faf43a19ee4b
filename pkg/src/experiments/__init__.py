"""Training and evaluation experiments"""
