"""
Trajformer

Desk-scale multimodal trajectory prediction: a self-attention encoder over
fused pose, patch and positional embeddings, an autoregressive affine
normalizing-flow decoder, a symmetric cross-entropy objective against a
grid-map prior, and the minADE / minFDE / rF / DAO / DAC metrics suite.
All numerics run on a small numpy reverse-mode engine.
"""

__version__ = "1.0.0"
