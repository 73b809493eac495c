"""Forecasting engine for recurrent SQL workloads.

Turns a historical query log into forecasts of entire future statements
with arrival times, over next-k and next-interval horizons: templatize,
featurize, train per-template or per-bin sequence models, plan model
granularity by cutting large templates and packing small ones, score
forecasts with containment metrics, and adapt to drift via monitored
fine-tuning.
"""

__version__ = "0.1.0"
