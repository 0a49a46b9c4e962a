"""Super-resolution convolutional networks built on numpy.

Data synthesis, momentum-SGD training, arbitrary-size inference and a
PSNR/SSIM/MS-SSIM benchmark harness.
"""

from .errors import ConfigError, FormatError, ShapeError, SRLabError
from .model import (
    Network,
    NetworkConfig,
    count_weights,
    forward,
    init_network,
    load_checkpoint,
    predict_full,
    receptive_field,
    save_checkpoint,
)
from .tensor import FilterBank, conv2d_backward, conv2d_valid, relu, relu_backward

__version__ = "0.1.0"
