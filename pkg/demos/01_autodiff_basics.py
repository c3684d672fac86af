"""A tour of the autodiff engine: tapes, gradients, and Adam.

Everything in this package runs on a small reverse-mode engine over
float64 numpy arrays.  This script builds a few tensors, checks a tape
gradient against central finite differences, and minimizes a bowl with
Adam.
"""

import numpy as np

import wlss.autodiff as ad
from wlss.autodiff import Tensor, Tape, backward

rng = np.random.default_rng(0)

# --- a scalar loss through a few ops -------------------------------------
x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
w = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)

with Tape() as tape:
    h = ad.relu(ad.linear(x, w, b))
    loss = ad.sum_all(ad.mul(h, h))
backward(loss, tape)
print(f"loss = {float(loss.data):.4f}")
print(f"dloss/dw norm = {np.linalg.norm(w.grad):.4f}")

# --- gradient vs central finite differences ------------------------------
h_step = 1e-4
idx = (1, 2)
keep = w.data[idx]
w.data[idx] = keep + h_step
with Tape() as t2:
    up = ad.sum_all(ad.mul(ad.relu(ad.linear(x, w, b)), ad.relu(ad.linear(x, w, b))))
w.data[idx] = keep - h_step
with Tape() as t3:
    dn = ad.sum_all(ad.mul(ad.relu(ad.linear(x, w, b)), ad.relu(ad.linear(x, w, b))))
w.data[idx] = keep
fd = (float(up.data) - float(dn.data)) / (2 * h_step)
print(f"tape grad {w.grad[idx]: .6f}  vs finite difference {fd: .6f}")

# --- Adam on f(p) = sum(p^2) ----------------------------------------------
p = Tensor(np.array([3.0, -2.0, 1.0]), requires_grad=True)
params = {"p": p}
state = ad.AdamState(params, lr=0.1)
for step in range(200):
    p.grad = 2.0 * p.data
    ad.adam_step(params, state)
print(f"after 200 Adam steps on a quadratic: |p| = {np.linalg.norm(p.data):.2e}")

# --- convolutions and their adjoint ---------------------------------------
img = Tensor(rng.standard_normal((1, 1, 8, 8)))
kernel = Tensor(rng.standard_normal((2, 1, 2, 2)))
conv = ad.conv2d(img, kernel, Tensor(np.zeros(2)), padding="valid", stride=2)
probe = rng.standard_normal(conv.data.shape)
back = ad.conv2d_transposed(Tensor(probe), kernel, stride=2)
lhs = np.sum(conv.data * probe)
rhs = np.sum(img.data * back.data)
print(f"adjoint identity <conv(x), y> = <x, convT(y)>: {lhs:.6f} vs {rhs:.6f}")
