"""Reference dummy denoiser.

The formula is shared normatively with the engine's in-process stand-in
and must agree with it bit for bit on float32 inputs:

    eps[m,c,i,j] = tanh(z[m,c,i,j]) * (0.5 + 0.5*conditional)
                   + 0.01 * ((t_train mod 7) - 3)
"""

from __future__ import annotations

import numpy as np


def dummy_denoise(z: np.ndarray, t_train: int, prompt: str, conditional: bool) -> np.ndarray:
    gain = 0.5 + 0.5 * (1 if conditional else 0)
    bias = 0.01 * ((t_train % 7) - 3)
    return np.tanh(z) * gain + bias
