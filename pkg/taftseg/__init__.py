"""
Few-shot segmentation with task-adaptive feature transformation.
"""

__version__ = "0.1.0"
