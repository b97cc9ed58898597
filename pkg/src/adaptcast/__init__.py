"""Adaptive forecasting over a grid of windowed ARIMAX/VARMA models for bracketed order-book data."""

__all__ = [
    "market_data",
    "features",
    "stationarity",
    "model_zoo",
    "adaptive",
    "evaluation",
    "hypotest",
    "cli",
]
