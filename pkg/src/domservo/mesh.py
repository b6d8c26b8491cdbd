"""Particle-mesh model of a deformable object.

A mesh is a set of point masses joined by stretch springs (structural)
and optional second-neighbor bend springs.  Each particle carries one of
three roles: Manipulated particles are pinned to externally commanded
grasp targets, Feedback particles are the ones controllers observe, and
Uninformative particles only shape the dynamics.
"""

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import InvalidParam, UnknownTask


class Role(IntEnum):
    MANIPULATED = 0
    FEEDBACK = 1
    UNINFORMATIVE = 2


_ROLE_LETTER = {Role.MANIPULATED: "M", Role.FEEDBACK: "F", Role.UNINFORMATIVE: "U"}
_LETTER_ROLE = {v: k for k, v in _ROLE_LETTER.items()}


@dataclass
class DeformableMesh:
    positions: np.ndarray          # (n, 3) meters
    edges: np.ndarray              # (m, 2) structural spring endpoints
    rest: np.ndarray               # (m,) rest lengths, > 0
    stiff: np.ndarray              # (m,) spring constants N/m
    roles: np.ndarray              # (n,) Role values
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bend_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    bend_rest: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bend_stiff: np.ndarray = field(default_factory=lambda: np.zeros(0))
    masses: np.ndarray = None      # (n,), defaults to 1.0 each
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.rest = np.asarray(self.rest, dtype=np.float64)
        self.stiff = np.asarray(self.stiff, dtype=np.float64)
        self.roles = np.asarray(self.roles, dtype=np.int64)
        self.gravity = np.asarray(self.gravity, dtype=np.float64)
        self.bend_edges = np.asarray(self.bend_edges, dtype=np.int64).reshape(-1, 2)
        self.bend_rest = np.asarray(self.bend_rest, dtype=np.float64)
        self.bend_stiff = np.asarray(self.bend_stiff, dtype=np.float64)
        if self.masses is None:
            self.masses = np.ones(len(self.positions))
        self.masses = np.asarray(self.masses, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.validate()

    def validate(self):
        n = len(self.positions)
        if n < 2:
            raise InvalidParam(f"mesh needs at least 2 particles, got {n}")
        for name, e in (("spring", self.edges), ("bend", self.bend_edges)):
            if len(e):
                if e.min() < 0 or e.max() >= n:
                    raise InvalidParam(f"{name} endpoint out of range")
                if np.any(e[:, 0] == e[:, 1]):
                    raise InvalidParam(f"{name} endpoints must be distinct")
        if np.any(self.rest <= 0) or np.any(self.bend_rest <= 0):
            raise InvalidParam("rest lengths must be positive")
        if len(self.rest) != len(self.edges) or len(self.stiff) != len(self.edges):
            raise InvalidParam("spring array lengths disagree")
        if len(self.roles) != n or len(self.masses) != n:
            raise InvalidParam("per-particle array lengths disagree")
        if not np.any(self.roles == Role.MANIPULATED):
            raise InvalidParam("mesh needs at least one Manipulated particle")
        if not np.any(self.roles == Role.FEEDBACK):
            raise InvalidParam("mesh needs at least one Feedback particle")

    def manipulated_indices(self) -> np.ndarray:
        return np.flatnonzero(self.roles == Role.MANIPULATED)

    def feedback_indices(self) -> np.ndarray:
        return np.flatnonzero(self.roles == Role.FEEDBACK)

    def all_springs(self):
        """Structural and bend springs concatenated, as (edges, rest, stiff)."""
        if len(self.bend_edges) == 0:
            return self.edges, self.rest, self.stiff
        return (np.vstack([self.edges, self.bend_edges]),
                np.concatenate([self.rest, self.bend_rest]),
                np.concatenate([self.stiff, self.bend_stiff]))

    def copy(self) -> "DeformableMesh":
        return DeformableMesh(
            positions=self.positions.copy(), edges=self.edges.copy(),
            rest=self.rest.copy(), stiff=self.stiff.copy(), roles=self.roles.copy(),
            gravity=self.gravity.copy(), bend_edges=self.bend_edges.copy(),
            bend_rest=self.bend_rest.copy(), bend_stiff=self.bend_stiff.copy(),
            masses=self.masses.copy(), faces=self.faces.copy())


@dataclass
class GraspCommand:
    """Absolute targets for the Manipulated particles, in ascending index order."""
    targets: np.ndarray            # (k, 3)
    max_step: float = 0.02         # per-step infinity-norm displacement bound

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1, 3)
        if self.max_step <= 0:
            raise InvalidParam("max_step must be positive")

    def validate_for(self, mesh: DeformableMesh, previous: "GraspCommand" = None):
        k = len(mesh.manipulated_indices())
        if len(self.targets) != k:
            raise InvalidParam(
                f"grasp targets {len(self.targets)} != manipulated particles {k}")
        if previous is not None:
            step = np.max(np.abs(self.targets - previous.targets))
            if step > self.max_step + 1e-12:
                raise InvalidParam(
                    f"grasp step {step:.4g} exceeds max_step {self.max_step:.4g}")


def clamp_step(delta: np.ndarray, max_step: float) -> np.ndarray:
    """Scale a displacement so its infinity norm is at most max_step."""
    m = float(np.max(np.abs(delta))) if delta.size else 0.0
    if m <= max_step or m == 0.0:
        return delta
    return delta * (max_step / m)


# -- task meshes ---------------------------------------------------------------

CLOTH_W = 0.3    # meters along x
CLOTH_H = 0.35   # meters along y
GRAVITY = np.array([0.0, 0.0, -9.8])


def _grid_mesh(nx, ny, k_struct, k_shear, k_bend, total_mass):
    xs = np.linspace(0.0, CLOTH_W, nx)
    ys = np.linspace(0.0, CLOTH_H, ny)
    pos = np.zeros((nx * ny, 3))
    for iy in range(ny):
        for ix in range(nx):
            pos[iy * nx + ix, 0] = xs[ix]
            pos[iy * nx + ix, 1] = ys[iy]
    edges, stiff = [], []

    def add(a, b, k):
        edges.append((a, b))
        stiff.append(k)

    for iy in range(ny):
        for ix in range(nx):
            i = iy * nx + ix
            if ix + 1 < nx:
                add(i, i + 1, k_struct)
            if iy + 1 < ny:
                add(i, i + nx, k_struct)
            if ix + 1 < nx and iy + 1 < ny:
                add(i, i + nx + 1, k_shear)
                add(i + 1, i + nx, k_shear)
    bend_edges, bend_stiff = [], []
    for iy in range(ny):
        for ix in range(nx):
            i = iy * nx + ix
            if ix + 2 < nx:
                bend_edges.append((i, i + 2))
                bend_stiff.append(k_bend)
            if iy + 2 < ny:
                bend_edges.append((i, i + 2 * nx))
                bend_stiff.append(k_bend)
    faces = []
    for iy in range(ny - 1):
        for ix in range(nx - 1):
            i = iy * nx + ix
            faces.append((i, i + 1, i + nx))
            faces.append((i + 1, i + nx + 1, i + nx))
    edges = np.array(edges, dtype=np.int64)
    bend_edges = np.array(bend_edges, dtype=np.int64).reshape(-1, 2)
    rest = np.linalg.norm(pos[edges[:, 0]] - pos[edges[:, 1]], axis=1)
    bend_rest = (np.linalg.norm(pos[bend_edges[:, 0]] - pos[bend_edges[:, 1]], axis=1)
                 if len(bend_edges) else np.zeros(0))
    masses = np.full(nx * ny, total_mass / (nx * ny))
    return pos, edges, rest, np.array(stiff, float), bend_edges, bend_rest, \
        np.array(bend_stiff, float), masses, np.array(faces, dtype=np.int64)


def _corner_indices(nx, ny):
    return [0, nx - 1, (ny - 1) * nx, ny * nx - 1]


def make_task_mesh(task: str, resolution=(7, 8)) -> DeformableMesh:
    """Build the canonical mesh for a named task.

    cloth-rect   grid with the four corners Manipulated (two robot, two hand)
    rope-bend    1D chain, both ends Manipulated, interior Feedback
    sheet-bend   stiff grid, near-edge corners Manipulated, far edge scripted
    peg-in-hole  mixed-stiffness grid with two Feedback hole particles
    """
    name = task.strip().lower()
    nx, ny = int(resolution[0]), int(resolution[1])
    if name == "rope-bend":
        n = nx
        if n < 4:
            raise InvalidParam("rope-bend needs at least 4 particles")
        pos = np.zeros((n, 3))
        pos[:, 0] = np.arange(n) * 0.05
        edges = np.array([(i, i + 1) for i in range(n - 1)], dtype=np.int64)
        rest = np.full(n - 1, 0.05)
        stiff = np.full(n - 1, 60.0)
        bend_edges = np.array([(i, i + 2) for i in range(n - 2)], dtype=np.int64)
        bend_rest = np.full(n - 2, 0.1)
        bend_stiff = np.full(n - 2, 4.0)
        roles = np.full(n, Role.FEEDBACK, dtype=np.int64)
        roles[0] = roles[-1] = Role.MANIPULATED
        return DeformableMesh(pos, edges, rest, stiff, roles, GRAVITY.copy(),
                              bend_edges, bend_rest, bend_stiff,
                              masses=np.full(n, 0.02))
    if name not in ("cloth-rect", "sheet-bend", "peg-in-hole"):
        raise UnknownTask(f"unknown task {task!r}")
    if nx < 3 or ny < 3:
        raise InvalidParam("grid tasks need nx, ny >= 3")
    if name == "cloth-rect":
        pos, edges, rest, stiff, be, br, bs, masses, faces = _grid_mesh(
            nx, ny, k_struct=40.0, k_shear=12.0, k_bend=1.0, total_mass=0.2)
        roles = np.full(nx * ny, Role.UNINFORMATIVE, dtype=np.int64)
        corners = _corner_indices(nx, ny)
        # boundary particles are observable markers
        for iy in range(ny):
            for ix in range(nx):
                if ix in (0, nx - 1) or iy in (0, ny - 1):
                    roles[iy * nx + ix] = Role.FEEDBACK
        roles[corners] = Role.MANIPULATED
    elif name == "sheet-bend":
        pos, edges, rest, stiff, be, br, bs, masses, faces = _grid_mesh(
            nx, ny, k_struct=120.0, k_shear=40.0, k_bend=8.0, total_mass=0.15)
        roles = np.full(nx * ny, Role.FEEDBACK, dtype=np.int64)
        roles[0] = roles[nx - 1] = Role.MANIPULATED      # robot corners
        for ix in range(nx):                             # scripted far edge
            roles[(ny - 1) * nx + ix] = Role.MANIPULATED
    else:  # peg-in-hole
        pos, edges, rest, stiff, be, br, bs, masses, faces = _grid_mesh(
            nx, ny, k_struct=40.0, k_shear=12.0, k_bend=1.0, total_mass=0.2)
        # stiff half / soft half makes the plant response strongly nonlinear
        mid = pos[edges[:, 0], 0] + pos[edges[:, 1], 0]
        stiff = np.where(mid < CLOTH_W, 200.0, 8.0)
        bmid = (pos[be[:, 0], 0] + pos[be[:, 1], 0]) if len(be) else np.zeros(0)
        bs = np.where(bmid < CLOTH_W, 5.0, 0.5) if len(be) else bs
        roles = np.full(nx * ny, Role.UNINFORMATIVE, dtype=np.int64)
        roles[0] = roles[nx - 1] = Role.MANIPULATED
        h1 = (ny // 2) * nx + nx // 3
        h2 = (ny // 2) * nx + (2 * nx) // 3
        if h1 == h2:
            h2 += 1
        roles[h1] = roles[h2] = Role.FEEDBACK
    return DeformableMesh(pos, edges, rest, stiff, roles, GRAVITY.copy(),
                          be, br, bs, masses=masses, faces=faces)


# -- text serialization --------------------------------------------------------

def mesh_to_text(mesh: DeformableMesh) -> str:
    lines = [f"particles {len(mesh.positions)} springs {len(mesh.edges)}"]
    for p, r in zip(mesh.positions, mesh.roles):
        lines.append(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} "
                     f"{_ROLE_LETTER[Role(r)]}")
    for (a, b), rst, k in zip(mesh.edges, mesh.rest, mesh.stiff):
        lines.append(f"{a} {b} {float(rst)!r} {float(k)!r}")
    if len(mesh.bend_edges):
        lines.append(f"bends {len(mesh.bend_edges)}")
        for (a, b), rst, k in zip(mesh.bend_edges, mesh.bend_rest, mesh.bend_stiff):
            lines.append(f"{a} {b} {float(rst)!r} {float(k)!r}")
    if len(mesh.faces):
        lines.append(f"faces {len(mesh.faces)}")
        for f in mesh.faces:
            lines.append(f"{f[0]} {f[1]} {f[2]}")
    g = mesh.gravity
    lines.append(f"gravity {float(g[0])!r} {float(g[1])!r} {float(g[2])!r}")
    lines.append("masses " + " ".join(repr(float(m)) for m in mesh.masses))
    return "\n".join(lines) + "\n"


def mesh_from_text(text: str) -> DeformableMesh:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "particles" or head[2] != "springs":
        raise InvalidParam("bad mesh header")
    n, m = int(head[1]), int(head[3])
    pos = np.zeros((n, 3))
    roles = np.zeros(n, dtype=np.int64)
    for i in range(n):
        parts = lines[1 + i].split()
        pos[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
        roles[i] = _LETTER_ROLE[parts[3]]
    edges = np.zeros((m, 2), dtype=np.int64)
    rest = np.zeros(m)
    stiff = np.zeros(m)
    for j in range(m):
        parts = lines[1 + n + j].split()
        edges[j] = [int(parts[0]), int(parts[1])]
        rest[j] = float(parts[2])
        stiff[j] = float(parts[3])
    idx = 1 + n + m
    be = np.zeros((0, 2), dtype=np.int64)
    br = np.zeros(0)
    bst = np.zeros(0)
    faces = np.zeros((0, 3), dtype=np.int64)
    gravity = np.zeros(3)
    masses = None
    while idx < len(lines):
        parts = lines[idx].split()
        if parts[0] == "bends":
            nb = int(parts[1])
            be = np.zeros((nb, 2), dtype=np.int64)
            br = np.zeros(nb)
            bst = np.zeros(nb)
            for j in range(nb):
                p = lines[idx + 1 + j].split()
                be[j] = [int(p[0]), int(p[1])]
                br[j] = float(p[2])
                bst[j] = float(p[3])
            idx += 1 + nb
        elif parts[0] == "faces":
            nf = int(parts[1])
            faces = np.zeros((nf, 3), dtype=np.int64)
            for j in range(nf):
                p = lines[idx + 1 + j].split()
                faces[j] = [int(p[0]), int(p[1]), int(p[2])]
            idx += 1 + nf
        elif parts[0] == "gravity":
            gravity = np.array([float(parts[1]), float(parts[2]), float(parts[3])])
            idx += 1
        elif parts[0] == "masses":
            masses = np.array([float(v) for v in parts[1:]])
            idx += 1
        else:
            raise InvalidParam(f"unknown mesh section {parts[0]!r}")
    return DeformableMesh(pos, edges, rest, stiff, roles, gravity,
                          be, br, bst, masses=masses, faces=faces)


def save_mesh(mesh: DeformableMesh, path):
    with open(path, "w") as fh:
        fh.write(mesh_to_text(mesh))


def load_mesh(path) -> DeformableMesh:
    with open(path) as fh:
        return mesh_from_text(fh.read())
