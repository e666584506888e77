"""
Network covert channel pattern toolkit
Pattern catalog, protocol-agnostic hiding codecs, pattern variation, combination and hopping,
a simulated channel, and pattern-targeted countermeasures.
"""

__version__ = "0.3.0"
