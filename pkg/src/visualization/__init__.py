from .residual_plots import create_learning_curve, create_residual_timeline

__all__ = ["create_learning_curve", "create_residual_timeline"]
