"""Pure-numpy implementations of the hot kernels.

Same contracts as the compiled extension in ``_kernels.pyx``; the active
backend is picked in ``backend.py`` at import time. Both backends produce
bit-identical outputs (same patch layout, same first-index tie breaking),
so training trajectories do not depend on which one is loaded.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col3x3(x):
    """Extract padded 3x3 patches of an NCHW tensor.

    Returns an array of shape (C*9, N*H*W): column n*H*W + h*W + w holds
    the patch centered at (h, w) of sample n, flattened channel-major.
    """
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * 9, n * h * w)
    return np.ascontiguousarray(cols)


def maxpool2_forward(x):
    """2x2 max pooling with stride 2; also returns in-block argmax.

    Ties resolve to the first element in row-major block order, matching
    the compiled kernel.
    """
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    blocks = x.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h2, w2, 4)
    idx = np.argmax(blocks, axis=-1).astype(np.int8)
    y = np.take_along_axis(blocks, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return y, idx


def maxpool2_backward(dy, idx, h, w):
    """Scatter pooled gradients back to the input positions."""
    n, c, h2, w2 = dy.shape
    blocks = np.zeros((n, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(blocks, idx[..., None].astype(np.intp), dy[..., None], axis=-1)
    dx = blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx.reshape(n, c, h, w))
