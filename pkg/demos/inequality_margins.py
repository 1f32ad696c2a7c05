"""Sample random Hermitian pairs and print how much room the gradient inequality leaves."""
import numpy as np

from hermflow import ay_inequality as ay
from hermflow.calculus import Grid
from hermflow.chern import build_metric

rows = ay.fuzz_theorem3(range(8)) + ay.fuzz_corollary(range(8))
for row in rows:
    print(row.line(), f"relative={row.relative_margin:.3e}")
print("worst relative margin:", ay.worst(rows))

# with a constant background the torsion terms vanish and the right side is zero
grid = Grid.uniform(2, 8)
flat = build_metric(grid, np.eye(2))
u = ay.random_potential(grid, flat, 2, 0.15, seed=1)
rep = ay.corollary_sides(grid, flat, u)
print("flat background: max |RHS| =", np.abs(rep.rhs).max(), " max LHS =", rep.lhs.max())

# a potential pair carries no relative torsion, so both evaluations agree
print("general vs potential form:", ay.consistency_theorem3_vs_corollary(grid, flat, u))
