"""Blockwise latent recombination experiments.

Submodules: ``numerics``, ``synthdata``, ``recombine``, ``synthtrain``, ``metrics``,
``diffusion``, ``theory``, ``checkpoint``, ``config``, ``seeding`` and ``cli``.
"""

__version__ = "0.1.0"
