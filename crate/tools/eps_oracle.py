"""High-precision reference values for the per-round sketch epsilon.

Writes a CSV grid of (alpha, sigma2, n, t, k) with X and eps = -t ln(1 - 2X)
evaluated at 50 significant digits. Rows with X >= 1/2 carry "undefined".
"""
import random
import sys

from mpmath import mp, mpf, log

mp.dps = 50


def row(alpha, sigma2, n, t, k):
    a, s2 = mpf(alpha), mpf(sigma2)
    x = a * a * k * (k - 1) * (1 + log(n - k)) / (s2 * (n - 2))
    if x >= mpf(1) / 2:
        return x, None
    return x, -t * log(1 - 2 * x)


def main(out):
    rng = random.Random(20240611)
    lines = ["alpha,sigma2,n,t,k,x,eps"]
    for _ in range(1000):
        alpha = rng.uniform(0.01, 1.5)
        sigma2 = rng.uniform(0.1, 4.0)
        n = int(10 ** rng.uniform(1.5, 7.0))
        t = rng.randint(1, 15)
        k = max(2, min(n - 1, int(10 ** rng.uniform(0.3, 2.6))))
        x, eps = row(alpha, sigma2, n, t, k)
        e = "undefined" if eps is None else mp.nstr(eps, 20)
        lines.append(f"{alpha!r},{sigma2!r},{n},{t},{k},{mp.nstr(x, 20)},{e}")
    with open(out, "w") as fh:
        fh.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
