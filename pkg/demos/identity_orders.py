"""Halve the time step and watch the evolution-identity residuals fall like dt^2."""
from hermflow import monitors, verify

for label, problem, u, dt0 in verify.evolution_cases(seed=0):
    for name in monitors.IDENTITIES:
        res, orders = monitors.refinement_orders(problem, u, name, dt0)
        resid = "  ".join(f"{r.residual:.3e}" for r in res)
        print(f"{label:28s} {name:8s} {resid}   orders {', '.join(f'{o:.2f}' for o in orders)}")
