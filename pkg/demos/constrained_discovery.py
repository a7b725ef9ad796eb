"""Discovering a damped oscillator from noisy data, with and without symmetry.

The governing equations

    x1' = -0.1 x1 - x2
    x2' =  x1 - 0.1 x2

commute with the rotation generator L = [[0, 1], [-1, 0]]: rotating a
solution gives another solution.  This script generates noisy trajectories,
smooths them, and fits two models over a degree-2 polynomial library:

  * plain sequential thresholded least squares (every library term is free),
  * the same regression restricted to the 2-dimensional nullspace of the
    rotation constraint, so only exactly-equivariant fields are reachable.

With 20% observation noise the unconstrained fit is easily tempted into
spurious quadratic terms, while the constrained fit cannot be: no degree-2
equivariant vector field exists for this group action.
"""

import numpy as np

from symodes.constraint import assemble_equivariant_basis, materialize
from symodes.discover import SindyModel, equation_strings, equiv_c_fit, stlsq
from symodes.dynamics import get_system, make_dataset


def main():
    system = get_system("oscillator")
    lib = system.library()

    print("truth:")
    for line in equation_strings(lib, system.truth_matrix(lib)):
        print("  " + line)

    basis = assemble_equivariant_basis(lib, system.generators)
    print(f"\nrotation constraint nullspace: r = {basis.nullity} "
          f"of {lib.size * system.dim} coefficients")
    for j in range(basis.nullity):
        e = np.zeros(basis.nullity)
        e[j] = 1.0
        W = materialize(basis, e)
        print(f"  basis field {j + 1}:")
        for line in equation_strings(lib, np.round(W, 10)):
            print("    " + line)

    for seed in (3, 4, 5):
        print(f"\n-- dataset seed {seed} "
              f"(20% additive-relative noise, smoothed) --")
        ds = make_dataset(system, seed=seed)
        X, dX = ds.regression_arrays("train")

        W_free = stlsq(lib.evaluate(X), dX, threshold=ds.threshold)
        model_c = equiv_c_fit(ds, lib, system.generators)

        print("unconstrained STLSQ:")
        for line in equation_strings(lib, W_free):
            print("  " + line)
        print("rotation-constrained:")
        for line in model_c.equations():
            print("  " + line)


if __name__ == "__main__":
    main()
