"""
Command modules for the pchm CLI.
"""
