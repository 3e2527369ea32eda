"""Content-style decoupled makeup transfer.

Frequency decomposition separates content (high-frequency residual) from
makeup style (low-frequency component); an attention-style correspondence
deforms reference styles onto the source geometry; a purely unsupervised loss
suite trains the renderer. Includes a makeup-control algebra, an evaluation
protocol, a CLI and an HTTP inference service.
"""

__version__ = "0.1.0"
