"""Shared test oracles, written independently of the package internals."""

import numpy as np
from scipy.optimize import minimize

from domservo.mesh import DeformableMesh, Role


def naive_energy(mesh: DeformableMesh, pos: np.ndarray) -> float:
    """Per-spring python loop; no shared code with the kernels."""
    e = 0.0
    edges, rest, stiff = mesh.all_springs()
    for (a, b), L, k in zip(edges, rest, stiff):
        ln = float(np.linalg.norm(pos[a] - pos[b]))
        e += 0.5 * k * (ln - L) ** 2
    for i in range(len(pos)):
        e -= mesh.masses[i] * float(mesh.gravity @ pos[i])
    return e


def naive_gradient(mesh: DeformableMesh, pos: np.ndarray) -> np.ndarray:
    g = np.zeros_like(pos)
    edges, rest, stiff = mesh.all_springs()
    for (a, b), L, k in zip(edges, rest, stiff):
        d = pos[a] - pos[b]
        ln = float(np.linalg.norm(d))
        f = k * (ln - L) / ln * d
        g[a] += f
        g[b] -= f
    g -= mesh.masses[:, None] * mesh.gravity[None, :]
    return g


def descend_energy_gd(mesh: DeformableMesh, targets: np.ndarray,
                      step: float = None, iters: int = 300_000) -> np.ndarray:
    """Fixed-small-step gradient descent on the naive energy."""
    x = mesh.positions.copy()
    x[mesh.manipulated_indices()] = targets
    free = np.flatnonzero(mesh.roles != Role.MANIPULATED)
    _, _, stiff = mesh.all_springs()
    if step is None:
        step = 0.1 / (4.0 * float(stiff.max()))
    for _ in range(iters):
        g = naive_gradient(mesh, x)[free]
        if np.max(np.abs(g)) < 1e-10:
            break
        x[free] -= step * g
    return x


def descend_energy(mesh: DeformableMesh, targets: np.ndarray) -> np.ndarray:
    """Quasi-Newton descent (scipy) of the naive energy over the free
    particles.  Independent of the package solver on every axis that
    matters: optimizer, energy code, and gradient code."""
    x = mesh.positions.copy()
    x[mesh.manipulated_indices()] = targets
    free = np.flatnonzero(mesh.roles != Role.MANIPULATED)
    if len(free) == 0:
        return x

    def fun(flat):
        pos = x.copy()
        pos[free] = flat.reshape(-1, 3)
        return naive_energy(mesh, pos)

    def jac(flat):
        pos = x.copy()
        pos[free] = flat.reshape(-1, 3)
        return naive_gradient(mesh, pos)[free].ravel()

    res = minimize(fun, x[free].ravel(), jac=jac, method="L-BFGS-B",
                   options={"maxiter": 20000, "ftol": 1e-18, "gtol": 1e-10})
    out = x.copy()
    out[free] = res.x.reshape(-1, 3)

    # small-step polish: L-BFGS stops with gradients ~1e-7, not enough for
    # 1e-6 position agreement on flat directions
    _, _, stiff = mesh.all_springs()
    step = 0.2 / (4.0 * float(stiff.max()))
    for _ in range(20000):
        g = naive_gradient(mesh, out)[free]
        if np.max(np.abs(g)) < 1e-9:
            break
        out[free] -= step * g
    return out


def random_small_mesh(rng: np.random.Generator) -> DeformableMesh:
    """Connected random spring network, <= 12 particles.

    The instance must keep every spring stretched at equilibrium,
    otherwise the minimum is not unique: a slack network has floppy
    zero-stress mechanisms (identical energy, different positions) and a
    compressed spring can buckle into separate basins, and two correct
    descents then disagree.  A near-straight chain whose pinned endpoints
    sit farther apart than the summed rest lengths stays in tension
    everywhere, the energy is convex there, and the equilibrium is
    unique.  Light masses keep gravity from slackening any spring."""
    n = int(rng.integers(4, 13))
    spacing = rng.uniform(0.2, 0.3, size=n - 1)
    pos = np.zeros((n, 3))
    pos[1:, 0] = np.cumsum(spacing)
    pos[:, 1:] = rng.uniform(-0.03, 0.03, size=(n, 2))  # slight wiggle
    edges = [[i, i + 1] for i in range(n - 1)]  # spanning chain
    for j in range(n - 2):                      # chords, kept short so
        if rng.random() < 0.3:                  # they too stay stretched
            edges.append([j, j + 2])
    edges = np.unique(np.array(edges), axis=0)
    dists = np.linalg.norm(pos[edges[:, 0]] - pos[edges[:, 1]], axis=1)
    rest = dists * rng.uniform(0.6, 0.9, size=len(edges))
    stiff = rng.uniform(10.0, 60.0, size=len(edges))
    roles = np.full(n, Role.FEEDBACK)
    roles[0] = Role.MANIPULATED
    roles[n - 1] = Role.MANIPULATED
    masses = rng.uniform(0.002, 0.01, size=n)
    return DeformableMesh(positions=pos, edges=edges, rest=rest, stiff=stiff,
                          roles=roles, gravity=np.array([0.0, 0.0, -9.8]),
                          masses=masses)
