"""Pupil localization (morphology, threshold centroid, competitive
agglomeration) and extended-Kalman tracking of the pupil center."""

__version__ = "0.1.0"
