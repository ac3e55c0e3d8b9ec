"""Log anomaly detection: template mining, dual-model scoring with decision
fusion, analyst feedback, and consolidation-regularized retraining."""

__version__ = "0.1.0"
