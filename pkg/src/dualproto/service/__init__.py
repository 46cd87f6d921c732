"""FastAPI service exposing the benchmark harness and a prediction endpoint."""
