"""Non-contrastive vision-language alignment at desk scale.

Multi-crop image views are encoded by a vision transformer, predicted into
a shared 64-dimensional space, regressed onto frozen text-anchor embeddings,
and regularized toward an isotropic Gaussian via sketched
characteristic-function tests. Contrastive baselines and a zero-shot
prompt-matching evaluator are included for comparison.
"""

__version__ = "0.1.0"
