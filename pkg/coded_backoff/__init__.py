"""
Coded backoff: the decodable backoff protocol simulated on the coded radio network model.
"""
__version__ = "1.0.0"
