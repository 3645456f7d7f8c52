"""Hidden phase-type Markov models for reservoir inflows."""

__version__ = "0.1.0"
