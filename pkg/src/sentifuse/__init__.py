"""sentifuse: sentence sentiment models built on a small tape autodiff core.

Two model families share the infrastructure: a semi-supervised recursive
autoencoder trained with limited-memory BFGS (``rae``), and a dual-channel
classifier fusing convolution features with a bidirectional simple recurrent
unit trained by momentum SGD (``dualchannel``). Supporting modules:
``tensor`` (autodiff), ``kernels`` (jitted/numpy scan loops), ``textdata``
(corpora), ``embeddings``, ``optim``, ``bench``, ``checkpoint``, ``cli``.
"""

from . import (bench, checkpoint, cli, dualchannel, embeddings, kernels,
               optim, rae, tensor, textdata)

__version__ = "0.1.0"

__all__ = ["bench", "checkpoint", "cli", "dualchannel", "embeddings",
           "kernels", "optim", "rae", "tensor", "textdata", "__version__"]
