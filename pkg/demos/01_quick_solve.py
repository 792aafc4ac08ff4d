"""Solve one logistic regression problem in both partitioning modes.

Both runs reach the same minimizer. The ledger shows where the traffic goes:
sample partitioning sends full d-vectors twice per CG step, feature
partitioning sends one n-vector plus two scalars.
"""
import numpy as np

from disco import DiscoConfig, solve
from disco.synthetic import make_text_like

# %% a sparse, text-shaped problem with many more features than samples
ds = make_text_like(1000, 8000, nnz_per_sample=50, seed=0)
print(f"n={ds.n} d={ds.d} nnz={ds.X.nnz}")

cfg = DiscoConfig(tau=100, mu=1e-2, grad_tol=1e-8)
runs = {mode: solve(ds, "logistic", 1e-3, mode=mode, nodes=4, config=cfg) for mode in ("S", "F")}

# %% convergence: outer steps, CG steps per outer step, final gradient norm
for mode, res in runs.items():
    last = res.trace[-1]
    print(f"{mode}: outer={res.outer_iters} inner={res.inner_iters} grad_norm={last.grad_norm:.2e}")

gap = np.linalg.norm(runs["S"].w - runs["F"].w) / np.linalg.norm(runs["F"].w)
print(f"relative gap between the two solutions: {gap:.1e}")

# %% communication, broken down by phase
for mode, res in runs.items():
    print(f"\n{mode} ledger")
    print(f"{'phase':<16}{'kind':<12}{'rounds':>8}{'vec rounds':>12}{'scalars':>10}{'elements':>12}")
    for (phase, kind), c in sorted(res.ledger.counters.items()):
        print(f"{phase:<16}{kind:<12}{c.rounds:>8}{c.vector_rounds:>12}{c.scalars:>10}{c.vector_elements:>12}")
    tot = res.ledger.total()
    print(f"{'total':<28}{tot.rounds:>8}{tot.vector_rounds:>12}{tot.scalars:>10}{tot.vector_elements:>12}")
