#!/usr/bin/env python3
"""Arbitrary-precision oracle for the error-function family.

Generates, with mpmath at 40 significant digits:

  1. the Chebyshev coefficients frozen into ``pointheat.special`` (printed
     to stdout as a Python literal), and
  2. ``tests/data/erfc_reference.json``, a table of reference values of
     erfc(x) and erfcx(x) used by the test suite to validate the shipped
     implementation once per run.

Run from the repository root:

    python tools/gen_special_constants.py
"""

import json
import pathlib

import mpmath as mp
import numpy as np

mp.mp.dps = 40

# Mapped-variable Chebyshev expansion: with x = A(1+q)/(1-q), the function
# g(q) = (1 + sqrt(pi) x) erfcx(x) is smooth on q in [-1, 1] including both
# endpoints (x=0 and x=inf), so a single expansion covers all x >= 0.
MAP_A = 2.0
DEGREE = 40


def erfcx_mp(x):
    return mp.exp(x * x) * mp.erfc(x)


def chebyshev_coefficients():
    n = DEGREE + 1
    k = np.arange(n)
    nodes = np.cos(np.pi * (k + 0.5) / n)
    samples = []
    for q in nodes:
        x = mp.mpf(MAP_A) * (1 + mp.mpf(q)) / (1 - mp.mpf(q))
        samples.append(float((1 + mp.sqrt(mp.pi) * x) * erfcx_mp(x)))
    samples = np.array(samples)
    coeffs = np.zeros(n)
    for j in range(n):
        coeffs[j] = (2.0 / n) * np.sum(samples * np.cos(np.pi * j * (k + 0.5) / n))
    coeffs[0] /= 2.0
    return coeffs


def reference_table():
    xs = sorted(
        set(
            [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 13.0, 21.0, 26.0]
            + [float(t) for t in np.linspace(-26.0, 26.0, 261)]
            + [float(t) for t in np.logspace(-3, 7, 81)]
        )
    )
    rows = []
    for x in xs:
        xm = mp.mpf(x)
        rows.append(
            {
                "x": x,
                "erfc": mp.nstr(mp.erfc(xm), 25),
                "erfcx": mp.nstr(erfcx_mp(xm), 25),
            }
        )
    return rows


def main():
    coeffs = chebyshev_coefficients()
    print("# Chebyshev coefficients of (1 + sqrt(pi) x) erfcx(x) in")
    print(f"# q = (x - {MAP_A}) / (x + {MAP_A}), degree {DEGREE}:")
    print("_ERFCX_CHEB = (")
    for c in coeffs:
        print(f"    {float(c)!r},")
    print(")")

    out = pathlib.Path(__file__).resolve().parents[1] / "tests" / "data" / "erfc_reference.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"dps": mp.mp.dps, "rows": reference_table()}, indent=1))
    print(f"# wrote {out}")


if __name__ == "__main__":
    main()
