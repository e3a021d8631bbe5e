"""kronopt: a desk-scale lab for Kronecker-factored second-order optimization
with rank-1 factor-inverse updates, plus KFAC / SNGD / SGD baselines, cost
models, schedulers and curvature-aware pruning."""

__version__ = "0.1.0"
