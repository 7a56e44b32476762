"""Convergence order of the flow integrator on a quarter turn about the z axis."""

import argparse

import numpy as np

from rematching import VelocityFieldSpec, integrate_flow


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, nargs="+", default=[5, 10, 20, 40, 80])
    args = parser.parse_args()

    omega = np.pi / 2
    a = np.array([[0.0, -omega, 0.0], [omega, 0.0, 0.0], [0.0, 0.0, 0.0]])
    v = VelocityFieldSpec.rigid_motion(a, np.zeros(3))
    x0 = np.array([1.0, 0.0, 0.0])
    exact = np.array([np.cos(omega), np.sin(omega), 0.0])
    prev = None
    print("steps  endpoint error  ratio")
    for steps in args.steps:
        err = np.linalg.norm(integrate_flow(v, x0, 1.0, steps) - exact)
        ratio = "" if prev is None else f"{prev / err:.2f}"
        print(f"{steps:5d}  {err:.3e}      {ratio}")
        prev = err


if __name__ == "__main__":
    main()
