"""subdiff: a numerical laboratory for subdiffusive transport.

Age-structured jump processes with heavy-tailed waiting times, their Monte
Carlo counterpart, and the time-fractional heat equation they converge to,
plus the experiments that check the three routes against each other.
"""

__version__ = "0.1.0"
