"""Quasi-static equilibrium solver.

Each control step pins the Manipulated particles at their grasp targets
and settles the free particles to a minimum of

    U = sum 1/2 k (|xi - xj| - L)^2  -  sum_i m_i g . x_i

via damped Newton iterations with an Armijo line search; a plain
gradient step is the fallback when the Newton direction is unusable.
Accepted iterates never increase the energy, except at the float64
rounding floor where the gradient norm takes over as the descent test.
"""

import numpy as np

from . import kernels
from .errors import DegenerateSpring, NonConvergence
from .mesh import DeformableMesh, GraspCommand, Role

GRAD_TOL = 1e-8
MAX_ITER = 10000
MIN_SPRING_LEN = 1e-12


def energy(mesh: DeformableMesh, positions: np.ndarray) -> float:
    edges, rest, stiff = mesh.all_springs()
    e, _ = kernels.spring_energy(positions, edges, rest, stiff,
                                 mesh.masses, mesh.gravity)
    return e


def solve_equilibrium(mesh: DeformableMesh, grasp: GraspCommand,
                      tol_grad: float = GRAD_TOL, max_iter: int = MAX_ITER,
                      return_info: bool = False):
    """Return equilibrium positions (n, 3) with |grad U|_inf <= tol_grad on
    the free particles.  Manipulated rows equal the grasp targets exactly.

    Starts from mesh.positions, so passing the previous solution warm-starts
    the solve.  Raises NonConvergence past max_iter and DegenerateSpring if
    a spring collapses below numerical length at an accepted iterate.
    """
    grasp.validate_for(mesh)
    edges, rest, stiff = mesh.all_springs()
    man = mesh.manipulated_indices()
    free = np.flatnonzero(mesh.roles != Role.MANIPULATED)
    x = mesh.positions.copy()
    x[man] = grasp.targets
    info = {"iterations": 0, "energies": [], "grad_inf": np.inf}
    if len(free) == 0:
        info["grad_inf"] = 0.0
        return (x, info) if return_info else x

    dof = (free[:, None] * 3 + np.arange(3)[None, :]).ravel()

    def eval_grad(pos):
        g, min_len = kernels.spring_gradient(pos, edges, rest, stiff,
                                             mesh.masses, mesh.gravity)
        return g[free].ravel(), min_len

    def eval_energy(pos):
        e, min_len = kernels.spring_energy(pos, edges, rest, stiff,
                                           mesh.masses, mesh.gravity)
        return e, min_len

    e_cur, min_len = eval_energy(x)
    if min_len < MIN_SPRING_LEN:
        raise DegenerateSpring(f"spring length {min_len:.3g} at start of solve")
    info["energies"].append(e_cur)

    mu = 0.0  # Levenberg damping, carried across iterations
    for it in range(max_iter):
        info["iterations"] = it
        g, min_len = eval_grad(x)
        if min_len < MIN_SPRING_LEN:
            raise DegenerateSpring(f"spring length {min_len:.3g} during solve")
        ginf = float(np.max(np.abs(g)))
        info["grad_inf"] = ginf
        if ginf <= tol_grad:
            return (x, info) if return_info else x

        H = kernels.spring_hessian(x, edges, rest, stiff, len(x))
        Hf = H[np.ix_(dof, dof)]
        diag_scale = max(float(np.max(np.abs(np.diag(Hf)))), 1e-8)
        mu_base = 1e-8 * diag_scale
        step = None
        for _ in range(40):
            try:
                L = np.linalg.cholesky(Hf + mu * np.eye(len(dof)))
                d = np.linalg.solve(L.T, np.linalg.solve(L, -g))
            except np.linalg.LinAlgError:
                mu = max(mu * 4.0, mu_base)
                continue
            if float(g @ d) < 0.0:
                step = d
                break
            mu = max(mu * 4.0, mu_base)
        if step is None:
            step = -g / diag_scale  # gradient fallback

        accepted = False
        slope = float(g @ step)
        # Below the rounding floor of e_cur the Armijo test cannot resolve
        # the (real) decrease; accept on gradient reduction instead.
        at_floor = abs(slope) <= 1e-14 * max(1.0, abs(e_cur))
        t = 1.0
        halvings = 0
        for _ in range(60):
            x_try = x.copy()
            x_try[free] += (t * step).reshape(-1, 3)
            e_try, min_try = eval_energy(x_try)
            if min_try >= MIN_SPRING_LEN:
                if at_floor:
                    g_try, _ = eval_grad(x_try)
                    ok = float(np.max(np.abs(g_try))) < ginf
                else:
                    ok = e_try <= e_cur + 1e-4 * t * slope
                if ok:
                    x = x_try
                    e_cur = e_try
                    accepted = True
                    break
            t *= 0.5
            halvings += 1
        if accepted:
            if halvings == 0:
                mu = 0.0 if mu <= mu_base else mu * 0.25
            elif halvings >= 3:
                mu = max(mu * 4.0, mu_base)
        if not accepted:
            # Newton direction unusable at line-search resolution; try a
            # short gradient step before giving up.
            mu = max(mu * 16.0, mu_base)
            t = 1.0 / diag_scale
            for _ in range(60):
                x_try = x.copy()
                x_try[free] -= (t * g).reshape(-1, 3)
                e_try, min_try = eval_energy(x_try)
                if min_try >= MIN_SPRING_LEN and e_try < e_cur:
                    x = x_try
                    e_cur = e_try
                    accepted = True
                    break
                t *= 0.5
        if not accepted:
            raise NonConvergence(
                f"no descent step found at iteration {it} (grad {ginf:.3g})")
        info["energies"].append(e_cur)

    g, _ = eval_grad(x)
    raise NonConvergence(
        f"gradient {np.max(np.abs(g)):.3g} above {tol_grad} after {max_iter} iterations")
