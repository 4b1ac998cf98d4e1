#!/usr/bin/env python3
"""Generate the effective 87Rb D1 branching-table fixture.

Sums squared dipole matrix elements (Wigner 3j/6j, sympy) of the 16-level
D1 manifold over the sublevels lumped into each effective state, then
normalizes each excited row. Output: crates/core/data/branching_d1.txt
"""
import sys
from fractions import Fraction

from sympy import Rational, S
from sympy.physics.wigner import wigner_3j, wigner_6j

I = Rational(3, 2)
J = Rational(1, 2)   # 5S1/2
JP = Rational(1, 2)  # 5P1/2


def strength(fp, mp, f, m):
    """Relative spontaneous-decay strength |F' m'> -> |F m>."""
    q = mp - m
    if abs(q) > 1:
        return S(0)
    six = wigner_6j(J, JP, 1, fp, f, I)
    three = wigner_3j(f, 1, fp, m, q, -mp)
    return (2 * fp + 1) * (2 * f + 1) * (2 * JP + 1) * six**2 * three**2


ground = {
    "Clock1": [(1, 0)],
    "Clock2": [(2, 0)],
    "Trap": [(1, -1), (1, 1), (2, -2), (2, -1), (2, 1), (2, 2)],
}
excited = {
    "CptExcited": [(2, 1)],
    "PiExcited": [(1, -1), (1, 1), (2, -2), (2, -1), (2, 1), (2, 2)],
    "OffRes1": [(1, 0)],
    "OffRes2": [(2, 0)],
}

rows = []
for ename, esub in excited.items():
    row = []
    for gname, gsub in ground.items():
        tot = S(0)
        for fp, mp in esub:
            for f, m in gsub:
                tot += strength(fp, mp, f, m)
        row.append(tot)
    norm = sum(row)
    # every excited sublevel must decay with total strength 1
    for fp, mp in esub:
        s = sum(strength(fp, mp, f, m) for f in (1, 2) for m in range(-f, f + 1))
        assert s == 1, (fp, mp, s)
    rows.append((ename, [r / norm for r in row]))

out = sys.stdout if len(sys.argv) < 2 else open(sys.argv[1], "w")
out.write("# effective 87Rb D1 branching ratios b[excited][ground]\n")
out.write("# lumped from squared dipole matrix elements; rows sum to 1\n")
out.write("excited\\ground Clock1 Clock2 Trap\n")
for ename, row in rows:
    out.write(ename + " " + " ".join(f"{float(v):.7g}" for v in row) + "\n")
for ename, row in rows:
    print(ename, [str(v) for v in row], file=sys.stderr)
