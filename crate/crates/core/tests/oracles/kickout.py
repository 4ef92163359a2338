"""Arbitrary-precision reference values for the sibling kick-out bound.

bound(n, m) = min(1, sum_{k=0}^{n-m} z_k q^(n-m-k+1) + sum_{k>n-m} z_k)
with z_k the Poisson(q * lambda_h * t) mass. Run: python3 kickout.py
"""
from mpmath import mp, mpf, exp, factorial, power

mp.dps = 50


def bound(q, lam, t, n, m):
    q, lam, t = mpf(q), mpf(lam), mpf(t)
    if m > n:
        return mpf(1)
    mu = q * lam * t
    gap = n - m
    z = lambda k: exp(-mu) * power(mu, k) / factorial(k)
    head = sum(z(k) * power(q, gap - k + 1) for k in range(gap + 1))
    tail = 1 - sum(z(k) for k in range(gap + 1))
    return min(mpf(1), head + tail)


CASES = [
    (0.2, 0.1, 600, 60, 5),
    (0.2, 0.1, 600, 20, 3),
    (0.25, 1.0, 30, 40, 0),
    (0.1, 0.5, 100, 15, 4),
    (0.3, 0.2, 1000, 150, 20),
    (0.05, 2.0, 10, 8, 8),
    (0.15, 0.25, 200, 35, 1),
    (0.45, 1.0, 50, 120, 10),
]

if __name__ == "__main__":
    for c in CASES:
        print(c, mp.nstr(bound(*c), 20))
