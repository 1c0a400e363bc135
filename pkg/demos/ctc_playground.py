"""Poke at the CTC loss with shapes small enough to enumerate by hand.

Shows that the dynamic-programming loss agrees with brute-force path
enumeration, what the collapse rule does, and how greedy decoding reads a
probability table.
"""

import numpy as np

from signgraph import tensor as tz
from signgraph.ctc import (
    collapse, ctc_loss, ctc_loss_bruteforce, greedy_decode, wer,
)
from signgraph.tensor import Tensor

# collapse: repeats merge, blanks (id 0) separate
print(collapse([1, 1, 0, 1, 2, 2]))   # (1, 1, 2)
print(collapse([0, 3, 3, 3, 0]))      # (3,)

# loss vs brute force on a random 4-step, 2-label table
rng = np.random.default_rng(0)
logits = rng.normal(size=(4, 3))
log_probs = tz.softmax_log(Tensor(logits))
target = [1, 2]
loss = float(ctc_loss(log_probs, target).data)
brute = -np.log(ctc_loss_bruteforce(np.exp(log_probs.data), target))
print(f"dp loss {loss:.10f}  brute force {brute:.10f}")

# the loss is differentiable: gradient of the log-softmax input
x = Tensor(logits, requires_grad=True)
with tz.Tape() as tape:
    l = ctc_loss(tz.softmax_log(x), target)
tz.backward(tape, l)
print("grad rows sum to zero:", np.allclose(x.grad.sum(axis=1), 0.0))

# greedy decode + WER bookkeeping
table = np.log(np.array([
    [0.7, 0.2, 0.1],
    [0.1, 0.8, 0.1],
    [0.1, 0.8, 0.1],
    [0.2, 0.1, 0.7],
]))
hyp = greedy_decode(table)
print("greedy:", hyp)
report = wer(hyp, [1, 1, 2])
print(f"wer {report.wer:.3f} del={report.deletions} "
      f"ins={report.insertions} sub={report.substitutions}")
