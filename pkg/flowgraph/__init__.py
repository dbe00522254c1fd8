"""
Discrete flow matching for categorical graph generation
"""

__version__ = "1.0.0"
