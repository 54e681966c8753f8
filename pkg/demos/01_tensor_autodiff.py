"""Tour of the tape-based tensor engine: forward ops, gradients, no_grad."""

import numpy as np

from stylerec import tensor as T

rng = np.random.default_rng(0)

# Every op records its parents and a vector-Jacobian product on a tape.
x = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
w = T.Tensor(rng.standard_normal((4, 2)), requires_grad=True)
hidden = T.relu(T.matmul(x, w))
loss = T.mean_all(hidden)
print("loss:", round(loss.item(), 6))

grads = T.backward(loss)
print("grad shapes:", grads[x].shape, grads[w].shape)

# The same gradient by central finite differences, at the entry where
# the tape gradient is largest.
i, j = np.unravel_index(np.abs(grads[x]).argmax(), grads[x].shape)
h = 1e-6
xp = x.data.copy(); xp[i, j] += h
xm = x.data.copy(); xm[i, j] -= h
f = lambda a: T.mean_all(T.relu(T.matmul(a, w.data))).item()
numeric = (f(xp) - f(xm)) / (2 * h)
print(f"dloss/dx[{i},{j}]: tape {grads[x][i, j]:.8f}  numeric {numeric:.8f}")

# Softmax with a validity mask: masked slots get exactly zero probability.
scores = T.Tensor(rng.standard_normal((2, 5)))
valid = np.array([[True, True, True, False, False],
                  [True, True, True, True, True]])
probs = T.softmax(scores, axis=-1, mask=valid)
print("masked row sums:", probs.data.sum(axis=-1))
print("masked entries:", probs.data[0, 3:])

# Layer norm keeps mean 0 / variance 1 per row before the affine part.
gamma = T.Tensor(np.ones(5))
beta = T.Tensor(np.zeros(5))
normed = T.layer_norm(scores, gamma, beta)
print("layer_norm row means:", np.round(normed.data.mean(axis=-1), 10))

# no_grad() turns the tape off for cheap inference passes.
with T.no_grad():
    silent = T.matmul(x, w)
print("taped under no_grad:", silent.node is not None)
