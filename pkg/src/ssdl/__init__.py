"""Diffusion-pretrained state-space latents for multichannel biosignal classification.

The pipeline has three stages: diffusion pretraining of a gated
state-space backbone on raw signal windows, extraction of temporally
pooled latent activities from the frozen backbone, and a fusion
transformer classifier trained on those latents.
"""

__version__ = "0.1.0"
