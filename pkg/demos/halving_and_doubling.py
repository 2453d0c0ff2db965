"""Two deterministic toy chains where closeness and agreement part ways.

Halving, x -> x/2, started from 0 and 1: the distance shrinks to zero, so for
every eps the copies are eventually eps-close forever.  The event "x != 0"
still separates them at every time.

Doubling, x -> 2x mod 1 on bit streams: a stream is a point of [0, 1) and one
step drops its leading bit.  The point mass at 0 and the uniform law are both
invariant, so laws started from them never merge.  Two independent uniform
streams still keep returning close to one another.
"""
from fractions import Fraction

import numpy as np

from couplinglab.coupling import tau_epsilon
from couplinglab.estimators import BitCylinder, ReplicaPlan, closeness_hits, weak_convergence_probe
from couplinglab.metrics import bit_metric
from couplinglab.systems import DOUBLING, HALVING, BitStream

T = 40
xs, ys = [Fraction(0)], [Fraction(1)]
for _ in range(T):
    xs.append(HALVING.step(xs[-1]))
    ys.append(HALVING.step(ys[-1]))

print("halving from 0 and 1")
for k in (1, 5, 10, 20):
    print(f"  eps = 2^-{k:<2}  copies stay eps-close from t = {tau_epsilon(xs, ys, Fraction(1, 2 ** k))}")
print("  indicator of x != 0 differs at every t:", all((a != 0) != (b != 0) for a, b in zip(xs, ys)))

res = weak_convergence_probe(DOUBLING, lambda g: BitStream.zeros(), lambda g: BitStream.uniform(g),
                             {"first bit 1": BitCylinder((1,))}, 200, ReplicaPlan(500, 200, 1),
                             times=[0, 50, 100, 200])
print("\ndoubling: P(first bit = 1) under the two laws")
for t, a, b in zip(res.times, res.first[:, 0], res.second[:, 0]):
    print(f"  t = {t:>3}  point mass {a:.3f}   uniform {b:.3f}")

g = np.random.default_rng(5)
hits = closeness_hits(DOUBLING, BitStream.uniform(g), BitStream.uniform(g), 2.0 ** -10, 10 ** 4,
                      lambda u, v: bit_metric(u, v, 10))
print(f"\ntwo uniform streams agree on 10 leading bits at {len(hits)} of 10^4 times: {hits[:8]} ...")
