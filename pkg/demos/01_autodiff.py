"""Reverse-mode gradients on an explicit tape, checked against finite differences."""

import numpy as np

from dwlab import tensor as T
from dwlab.tensor import Tape, Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(5, 3)))
w = Tensor(rng.normal(size=(3, 2)))


def loss(w):
    return T.mean(T.log(T.softmax(T.matmul(x, w))))


tape = Tape()
tape.watch(w)
tape.backward(loss(w))
print("autodiff gradient:\n", w.grad)

h = 1e-6
numeric = np.zeros_like(w.values)
for idx in np.ndindex(w.shape):
    up, down = w.values.copy(), w.values.copy()
    up[idx] += h
    down[idx] -= h
    numeric[idx] = (loss(Tensor(up)).item() - loss(Tensor(down)).item()) / (2 * h)
print("max abs difference to central differences:", np.abs(numeric - w.grad).max())

# The tape is single-use: a second backward pass is refused.
try:
    tape.backward(loss(w))
except T.TapeError as exc:
    print("second backward:", exc)
