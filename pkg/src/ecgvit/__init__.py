"""ECG emotion recognition pipeline.

Filters single-lead ECG, locates R peaks, turns beat segments into
scalogram/PSD image encodings, and classifies them with a small
SE-augmented vision transformer running on a built-in autograd engine.
"""

__version__ = "0.1.0"
