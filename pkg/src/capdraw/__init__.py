"""Caption-conditioned recurrent canvas drawing.

A small, self-contained generative model that paints an image step by step
through differentiable Gaussian-filter attention while soft-attending over
the words of an input caption. Training maximizes a variational lower bound;
everything runs on a float64 numpy tape with reverse-mode differentiation.
"""

__version__ = "0.1.0"
