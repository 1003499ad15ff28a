"""Hourly net-load forecasting with from-scratch FCNN and LSTM models.

Modules:
    numkernel: dense-matrix helpers, activations and finite-difference checks.
    models: FCNN and two-layer LSTM forward/backward passes, init, checkpoints.
    training: Huber loss, Adam with per-epoch decay, the mini-batch loop.
    dataset: CSV ingestion, windowing, chronological splits, normalization.
    synthgen: deterministic synthetic load/wind/solar data.
    pipeline: direct and indirect methods and the four-way comparison.
    metrics: MAPE, RMSPE, R^2, MAE/MSE, APE statistics.
    cli: the ``netload`` command.
"""

__version__ = "0.1.0"
