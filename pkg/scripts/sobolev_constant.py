"""Discrete Sobolev constant sup |w| / |grad w|_2 on a test corpus under refinement.

    python3 scripts/sobolev_constant.py
"""

import numpy as np

from qspde.domain import Interval, Rectangle, make_grid
from qspde.norms import fit_sobolev_constant, sobolev_exponent


def corpus(grid):
    x = grid.interior_nodes
    out = [np.prod(np.sin(k * np.pi * x), axis=1) for k in (1, 2, 3)]
    c = 0.5 * np.ones(grid.dim)
    out.append(np.prod(x * (1 - x), axis=1) * np.exp(-np.sum((x - c) ** 2, axis=1) / 0.05))
    out.append(np.prod(np.minimum(x, 1 - x), axis=1))
    return out


def main() -> None:
    print("dim,h,exponent,c_S")
    for shape, hs in ((Interval(1.0), (1 / 32, 1 / 64, 1 / 128, 1 / 256)),
                      (Rectangle(1.0, 1.0), (1 / 16, 1 / 32, 1 / 64))):
        cs = []
        for h in hs:
            g = make_grid(shape, h)
            cs.append(fit_sobolev_constant(g, corpus(g)))
            print(f"{shape.dim},{h!r},{sobolev_exponent(shape.dim)},{cs[-1]!r}")
        print(f"# {shape.dim}D spread max/min = {max(cs) / min(cs):.4f}")


if __name__ == "__main__":
    main()
