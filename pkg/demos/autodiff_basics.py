"""Tour of the reverse-mode engine: build a graph, run backward, check it.

Every op records its inputs and a backward closure; backward() walks the DAG
once in reverse topological order. The same graphs run in float64 for the
finite-difference oracle.
"""

import numpy as np

from esckit import autodiff as ad
from esckit.autodiff import Tensor
from esckit.fdcheck import check_gradient, op_gradient_checks

# gradients of a small expression: loss = sum((x @ w + b)^2)
rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((3, 4)).astype(np.float32), requires_grad=True)
w = Tensor(rng.standard_normal((4, 2)).astype(np.float32), requires_grad=True)
b = Tensor(np.zeros(2, np.float32), requires_grad=True)

y = ad.dense(x, w, b)
loss = ad.tensor_sum(ad.mul(y, y))
loss.backward()
print(f"loss = {loss.item():.4f}")
print(f"grad shapes: x {x.grad.shape}, w {w.grad.shape}, b {b.grad.shape}")
print(f"analytic grad of b = 2 * column sums of y: "
      f"{np.allclose(b.grad, 2 * y.data.sum(axis=0), atol=1e-5)}")

# the same check numerically, via central differences at 64-bit
err = check_gradient(
    lambda xt, wt, bt: ad.tensor_sum(ad.mul(ad.dense(xt, wt, bt), ad.dense(xt, wt, bt))),
    [x.data.astype(np.float64), w.data.astype(np.float64), b.data.astype(np.float64)])
print(f"finite-difference relative error: {err:.2e}")

# softmax + cross-entropy behave like the textbook says
probs = ad.softmax(Tensor(np.array([[1.0, 2.0, 3.0]], np.float32)))
print(f"softmax([1,2,3]) = {probs.data.round(5)} (sums to {probs.data.sum():.6f})")
uniform = Tensor(np.full((1, 4), 0.25, np.float32))
onehot = Tensor(np.eye(4, dtype=np.float32)[:1])
print(f"cross-entropy of a uniform 4-way guess = {ad.cross_entropy(uniform, onehot).item():.4f} "
      f"(ln 4 = {np.log(4):.4f})")

# the full per-op oracle table
print("\nper-op max relative errors (all must be <= 1e-4):")
for name, err in op_gradient_checks().items():
    print(f"  {name:24s} {err:.2e}")
