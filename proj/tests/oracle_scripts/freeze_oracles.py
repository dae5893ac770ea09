"""Independent high-precision oracles used to freeze expected values in the C++ tests.

Run with: python3 tests/oracle_scripts/freeze_oracles.py
"""
from fractions import Fraction
import mpmath as mp

mp.mp.dps = 50

CATS = [-2, -1, 0, 1, 2]


def fleiss_brute(items):
    n = len(items[0])
    N = len(items)
    counts = [[sum(1 for r in it if r == c) for c in CATS] for it in items]
    P_i = [Fraction(sum(x * (x - 1) for x in row), n * (n - 1)) for row in counts]
    P_bar = sum(P_i) / N
    p_j = [Fraction(sum(row[j] for row in counts), N * n) for j in range(len(CATS))]
    Pe = sum(p * p for p in p_j)
    return (P_bar - Pe) / (1 - Pe), counts


def welch(a, b):
    a = [mp.mpf(x) for x in a]
    b = [mp.mpf(x) for x in b]
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    va = sum((x - ma) ** 2 for x in a) / (len(a) - 1)
    vb = sum((x - mb) ** 2 for x in b) / (len(b) - 1)
    se2 = va / len(a) + vb / len(b)
    t = (ma - mb) / mp.sqrt(se2)
    df = se2 ** 2 / ((va / len(a)) ** 2 / (len(a) - 1) + (vb / len(b)) ** 2 / (len(b) - 1))
    dens = lambda x: mp.gamma((df + 1) / 2) / (mp.sqrt(df * mp.pi) * mp.gamma(df / 2)) * (1 + x * x / df) ** (-(df + 1) / 2)
    p = 2 * mp.quad(dens, [abs(t), abs(t) + 10, mp.inf])
    return t, df, p


fixture = [[2, 2, 1], [0, 0, 0], [-1, -2, -1], [1, 2, 0]]
k, counts = fleiss_brute(fixture)
print("fleiss 4x3 counts", counts)
print("fleiss 4x3 kappa", mp.nstr(mp.mpf(k.numerator) / k.denominator, 20), k)

for a, b in [
    ([1, 2, 3, 4, 5], [2, 3, 4, 5, 6]),
    ([1.2, 2.8, 3.1, 0.4], [5.5, 6.1, 4.9, 7.3, 6.6, 5.0]),
    ([0.1, 0.2, 0.15], [-0.3, 0.4, 0.9, 1.2]),
]:
    t, df, p = welch(a, b)
    print("welch", a, b, "t", mp.nstr(t, 20), "df", mp.nstr(df, 20), "p", mp.nstr(p, 20))

print("cos (1,2,3),(4,5,6)", mp.nstr(mp.mpf(32) / mp.sqrt(14 * 77), 20))
print("biasmag 1.21,-1.05", mp.nstr(mp.sqrt(mp.mpf("1.21") ** 2 + mp.mpf("1.05") ** 2), 20))
print("cai 1.21 vs 1.64", mp.nstr(1 / (1 + abs(mp.mpf("1.21") - mp.mpf("1.64"))), 20))
