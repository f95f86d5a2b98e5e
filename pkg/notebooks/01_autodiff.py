# %% [markdown]
# # Reverse-mode differentiation on a tape
#
# Operations record themselves on the active tape; `backward` replays the tape
# in reverse and accumulates gradients into the leaves.

# %%
import numpy as np

from histoswin.tensor import Tape, Tensor, backward, grad_check, matmul, relu, softmax, tsum

rng = np.random.default_rng(0)
w = Tensor(rng.standard_normal((4, 3)), requires_grad=True, name="w")
x = rng.standard_normal((5, 4))

def objective(t):
    p = softmax(relu(matmul(x, t)))
    return tsum(p * p)


with Tape() as tape:
    loss = objective(w)
backward(loss, tape)
print("loss", float(loss.data))
print("dL/dw\n", w.grad)

# %% [markdown]
# Central differences in 64-bit agree with the analytic gradient.

# %%
report = grad_check(objective, w.data.copy())
print(report)
