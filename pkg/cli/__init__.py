"""
Command-line surface of nvdephase.
"""
