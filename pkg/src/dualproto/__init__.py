"""Class-incremental learning with dual prototype stores and task-wise
adapters: a frozen extractor, per-task residual bottlenecks trained under a
center-adapt loss, and a two-step top-K-then-rerank predictor, wrapped in a
reproducible benchmark harness."""

__version__ = "0.1.0"
