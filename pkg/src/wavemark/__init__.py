"""Dynamic survival prediction from longitudinal biomarker monitoring.

Implements and compares landmark survival models for an irregularly
sampled biomarker: last-observation-carried-forward, mixed-effects
landmarking, and wavelet landmarking that extracts prognostic short-term
oscillations, plus IPCW-based predictive-accuracy evaluation, a synthetic
cohort generator, and a CLI binding the pipeline together.
"""

__version__ = "0.1.0"
