"""Distances |G^n - G| on a fixed compact for the approximating domains and
mollified coefficients.

    python3 scripts/green_convergence.py
"""

from qspde.domain import Interval
from qspde.green import green_convergence_study
from qspde.operators import scalar_sine, step


def show(label, rep):
    print(f"{label}: levels {rep.levels} reference {rep.reference_level}")
    for n, d in zip(rep.levels, rep.distances):
        print(f"  n={n:<4d} distance={d:.6g}")
    print(f"  non-increasing (5%): {rep.non_increasing(0.05)}  observed order: {rep.observed_order():.3f}")


def main() -> None:
    show("domain sequence, scalar-sine", green_convergence_study(
        scalar_sine(1), Interval(1.0), [0.5], 5, h=1 / 128, dt=1e-3, T=0.05, compact_r=0.3))
    show("mollified step coefficient", green_convergence_study(
        step(1), Interval(1.0), [0.25], 2, h=1 / 256, dt=1e-3, T=0.05, compact_r=0.1,
        vary="coefficient", levels=[4, 8, 16, 32, 64]))


if __name__ == "__main__":
    main()
