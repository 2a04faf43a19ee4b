"""ClaDec explainer"""
