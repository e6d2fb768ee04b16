"""The graph engine in miniature, including a straight-through op.

A discretization unit needs an op whose backward pass deliberately lies
about the forward derivative. This demo builds one by hand and checks the
honest parts of the graph against finite differences.
"""

import numpy as np

from discomm import autograd as ag
from discomm.autograd import GraphValue

# A tiny expression: loss = sum(sigmoid(w * x)^2)
x = GraphValue(np.array([0.5, -1.0, 2.0]))
w = GraphValue(np.array([1.5, 0.3, -0.7]))
s = ag.sigmoid(ag.mul(w, x))
loss = ag.reduce_sum(ag.mul(s, s))
ag.backward(loss)

print("loss          :", float(loss.value))
print("grad wrt w    :", w.grad)

eps = 1e-5
fd = []
for i in range(3):
    bump = np.zeros(3)
    bump[i] = eps
    up = ag._sigmoid((w.value + bump) * x.value)
    dn = ag._sigmoid((w.value - bump) * x.value)
    fd.append(((up**2).sum() - (dn**2).sum()) / (2 * eps))
print("finite diffs  :", np.array(fd))

# Now the dishonest op: forward is a hard step, backward claims identity.
print()
step = lambda v: np.where(v >= 0.0, 1.0, 0.0)
logits = GraphValue(np.array([0.3, -0.8, 1.2]))
bits = ag.custom_op(step, lambda g, v: (g,), logits)
downstream = ag.reduce_sum(ag.mul(bits, GraphValue(np.array([1.0, 2.0, 3.0]))))
ag.backward(downstream)
print("hard forward  :", bits.value, "(true derivative is zero a.e.)")
print("claimed grad  :", logits.grad, "(the identity let it through)")
