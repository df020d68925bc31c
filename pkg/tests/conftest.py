import numpy as np
import pytest

from ltvpassivity import corpus
from ltvpassivity.matfun import PiecewiseMatrixFunction
from ltvpassivity.odeflow import LtvSystem


def const(value, interval):
    return PiecewiseMatrixFunction.constant(np.atleast_2d(value), interval)


def lti(A, B, C, D, interval=(0.0, 2.0), name=None):
    return LtvSystem(const(A, interval), const(B, interval), const(C, interval),
                     const(D, interval), name)


@pytest.fixture(scope="session")
def msd():
    d = corpus.load("msd")
    return d.system(), d.storage


@pytest.fixture(scope="session")
def scalar_flow():
    d = corpus.load("scalar_flow")
    return d.system(), d.storage


@pytest.fixture(scope="session")
def scalar_lti():
    d = corpus.load("scalar_lti")
    return d.system(), d.storage


@pytest.fixture(scope="session")
def three_drop():
    d = corpus.load("three_drop")
    return d.system(), d.storage


def num(z) -> str:
    """Expression-grammar literal for a Python or numpy scalar."""
    z = complex(z)
    return f"({z.real!r} + ({z.imag!r})*i)" if z.imag else f"({z.real!r})"


def kernel_failing_instance(rng, n=None, m=None, interval=(0.0, 1.0)):
    """System whose storage ``diag(Q1, 0)`` has kernel ``e_n`` with ``C e_n != 0``.

    ``A e_n = a e_n`` keeps the flow inside the kernel, so the kernel
    condition fails only through ``C``.
    """
    n = int(rng.integers(2, 5)) if n is None else n
    m = int(rng.integers(1, 4)) if m is None else m
    G = rng.normal(size=(n - 1, n - 1))
    Q = np.zeros((n, n))
    Q[:-1, :-1] = G @ G.T / n + 0.5 * np.eye(n - 1)
    A = rng.normal(size=(n, n))
    A[:-1, -1] = 0.0
    A[-1, -1] = -abs(A[-1, -1])
    B = rng.normal(size=(n, m))
    C = rng.normal(size=(m, n))
    C[0, -1] = 1.0 + abs(C[0, -1])
    S = rng.normal(size=(m, m))
    D = S @ S.T
    return lti(A, B, C, D, interval), const(Q, interval)


def random_unitary(rng, n):
    Z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    U, R = np.linalg.qr(Z)
    return U * (np.diag(R) / np.abs(np.diag(R)))


def matrix_entries(M0, M1=None):
    """Entry table for ``M0 + M1 t`` in the expression grammar."""
    n, m = M0.shape
    if M1 is None:
        return [[num(M0[i, j]) for j in range(m)] for i in range(n)]
    return [[f"{num(M0[i, j])} + {num(M1[i, j])}*t" for j in range(m)] for i in range(n)]


def random_decreasing_q(rng, n=None, interval=(0.0, 3.0), jumps=True):
    """Weakly decreasing ``sum_i c_i (tau_i - t)_+ u_i u_i*`` plus optional downward jumps.

    Returns ``(Q, drop_times)``; ``u_i`` are the columns of a random unitary.
    Eigenvalue ``i`` dies at ``tau_i`` (a segment boundary), so the rank drops
    there.
    """
    n = int(rng.integers(1, 5)) if n is None else n
    a, b = interval
    U = random_unitary(rng, n)
    k = int(rng.integers(1, n + 1))
    taus = np.sort(rng.choice(np.linspace(a + 0.25, b - 0.25, 11), size=k, replace=False))
    tau = np.full(n, np.inf)
    tau[rng.permutation(n)[:k]] = taus
    c = rng.uniform(0.5, 2.0, size=n)
    # live values stay above base - shift >= 0.05, so deaths are downward jumps
    base = rng.uniform(0.3, 0.5, size=n)
    cuts = np.concatenate([[a], taus, [b]])
    pieces = []
    shift = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (lo + hi)
        alive = tau > mid
        if jumps and lo > a and rng.random() < 0.5:
            shift += 0.05
        # diagonal d_i(t) = c_i (tau_i - t) + base_i - shift on live coordinates
        d0 = np.where(alive, c * np.where(np.isfinite(tau), tau, b + 1.0) + base - shift, 0.0)
        d1 = np.where(alive, -c, 0.0)
        M0 = U @ np.diag(d0) @ U.conj().T
        M1 = U @ np.diag(d1) @ U.conj().T
        pieces.append((lo, hi, matrix_entries(M0, M1)))
    return PiecewiseMatrixFunction.from_expressions(pieces), taus
