"""Independent evaluation of the row-seed derivation and hash formulas.

Prints the values frozen into the Rust unit tests.
"""
M = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
    return z ^ (z >> 31)


def word(seed, c):
    return mix((seed + c * GOLDEN) & M)


def row_seeds(seed, row):
    w = [word(seed, 4 * row + c) for c in (1, 2, 3, 4)]
    return (w[0] | 1, w[1]), (w[2] | 1, w[3])


def index_hash(ab, i, k):
    a, b = ab
    v = (a * i + b) & M
    return ((v >> 32) * k) >> 32


def sign_hash(ab, i):
    a, b = ab
    v = (a * i + b) & M
    return 1 if v >> 63 == 0 else -1


if __name__ == "__main__":
    ix, sg = row_seeds(0, 0)
    print("seed0 row0 index a=%#018x b=%#018x" % ix)
    print("seed0 row0 sign  a=%#018x b=%#018x" % sg)
    print("seed0 row1 index a=%#018x" % row_seeds(0, 1)[0][0])
    ix, sg = row_seeds(GOLDEN, 0)
    print("golden row0 bin(i=5,k=8) =", index_hash(ix, 5, 8))
    print("golden row0 sign(i=5) =", sign_hash(sg, 5))
