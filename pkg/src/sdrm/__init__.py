"""Synthetic implicit-feedback data generation and evaluation toolkit.

Pipeline: preprocess a rating log into user-disjoint splits, pretrain a
multinomial VAE, train a score-based denoiser over the frozen VAE latent
space, sample and decode synthetic users, then measure downstream
recommendation utility and run a memorization audit.
"""

__version__ = "0.1.0"
