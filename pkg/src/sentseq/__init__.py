"""sentseq: hierarchical sequential sentence classification with
cross-dataset transfer and annotation-scheme analysis."""

__version__ = "0.1.0"
