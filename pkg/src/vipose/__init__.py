"""Visual-inertial relative pose tracking for rigid objects."""

__version__ = "0.1.0"
