"""Orthographic camera model over the particle mesh.

Depth mode writes normalized depth (nearest foreground 1, farthest 0,
background 0).  Lambertian mode writes flat-shaded max(0, n.l) per face
with normals oriented toward the camera; the default light sits at the
camera.  Occlusion of Feedback particles is decided against the z-buffer.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EmptyProjection, InvalidParam
from .mesh import DeformableMesh

PGM_MAX = 255


@dataclass
class CameraSpec:
    center: np.ndarray
    view_axis: np.ndarray
    up: np.ndarray
    image_width: int = 64
    image_height: int = 64
    world_window: tuple = (0.8, 0.8)   # meters (width, height)
    mode: str = "depth"                # "depth" | "lambert"
    light_dir: np.ndarray = None       # toward the light; default: at the camera
    occlusion_eps: float = 1e-3        # meters of depth slack

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.view_axis = np.asarray(self.view_axis, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        nv = np.linalg.norm(self.view_axis)
        nu = np.linalg.norm(self.up)
        if nv < 1e-12 or nu < 1e-12:
            raise InvalidParam("camera axes must be nonzero")
        self.view_axis = self.view_axis / nv
        self.up = self.up / nu
        if abs(float(self.view_axis @ self.up)) > 1e-9:
            raise InvalidParam("view axis and up must be orthogonal")
        if self.image_width < 8 or self.image_height < 8:
            raise InvalidParam("image dimensions must be at least 8")
        if self.mode not in ("depth", "lambert"):
            raise InvalidParam(f"unknown camera mode {self.mode!r}")
        if self.light_dir is None:
            self.light_dir = -self.view_axis
        self.light_dir = np.asarray(self.light_dir, dtype=np.float64)
        self.light_dir = self.light_dir / np.linalg.norm(self.light_dir)


@dataclass
class Observation:
    image: np.ndarray                 # (H, W) float in [0, 1]
    mask: np.ndarray                  # (H, W) bool foreground
    feedback_positions: np.ndarray    # (K, 3) current Feedback particle positions
    occluded_flags: np.ndarray        # (K,) bool
    feedback_pixels: np.ndarray = field(default=None, repr=False)  # (K, 2) col,row


def camera_basis(cam: CameraSpec):
    v = cam.view_axis
    u = cam.up
    r = np.cross(v, u)
    r = r / np.linalg.norm(r)
    return r, u, v


def project(cam: CameraSpec, positions: np.ndarray):
    """World points to (col_f, row_f, depth) continuous pixel coordinates."""
    r, u, v = camera_basis(cam)
    rel = positions - cam.center
    uc = rel @ r
    vc = rel @ u
    depth = rel @ v
    ww, wh = cam.world_window
    col = (uc / ww + 0.5) * cam.image_width - 0.5
    row = (0.5 - vc / wh) * cam.image_height - 0.5
    return np.stack([col, row], axis=1), depth, uc, vc


def render(mesh: DeformableMesh, cam: CameraSpec) -> Observation:
    """Rasterize the mesh; faces as flat-shaded triangles, or the structural
    springs as segments when the mesh has no faces (chains).

    Raises EmptyProjection when no particle lands inside the world window.
    """
    pts2, depth, uc, vc = project(cam, mesh.positions)
    ww, wh = cam.world_window
    inside = (np.abs(uc) <= ww / 2) & (np.abs(vc) <= wh / 2)
    if not np.any(inside):
        raise EmptyProjection("no particle inside the camera world window")

    tris = mesh.faces
    if len(tris):
        a = mesh.positions[tris[:, 0]]
        b = mesh.positions[tris[:, 1]]
        c = mesh.positions[tris[:, 2]]
        n = np.cross(b - a, c - a)
        norms = np.linalg.norm(n, axis=1)
        norms[norms < 1e-15] = 1.0
        n = n / norms[:, None]
        # orient every face toward the camera
        flip = (n @ cam.view_axis) > 0
        n[flip] = -n[flip]
        shade = np.maximum(n @ cam.light_dir, 0.0)
        segs = np.zeros((0, 2), dtype=np.int64)
        seg_shade = np.zeros(0)
    else:
        shade = np.zeros(0)
        segs = mesh.edges
        seg_shade = np.ones(len(segs))

    zbuf, img, mask8 = kernels.raster_mesh(
        pts2, depth, tris, shade, segs, seg_shade,
        cam.image_width, cam.image_height)
    mask = mask8.astype(bool)

    if cam.mode == "depth":
        img = np.zeros_like(zbuf)
        if mask.any():
            zs = zbuf[mask]
            near, far = float(zs.min()), float(zs.max())
            if far - near < 1e-12:
                img[mask] = 1.0
            else:
                img[mask] = (far - zbuf[mask]) / (far - near)
    else:
        img = np.clip(img, 0.0, 1.0)
        img[~mask] = 0.0

    fb = mesh.feedback_indices()
    fb_pos = mesh.positions[fb]
    fb_pix = pts2[fb]
    occluded = np.zeros(len(fb), dtype=bool)
    for i, idx in enumerate(fb):
        if not inside[idx]:
            occluded[i] = True
            continue
        px = int(np.rint(fb_pix[i, 0]))
        py = int(np.rint(fb_pix[i, 1]))
        if px < 0 or px >= cam.image_width or py < 0 or py >= cam.image_height:
            occluded[i] = True
            continue
        if zbuf[py, px] < depth[idx] - cam.occlusion_eps:
            occluded[i] = True
    return Observation(image=img, mask=mask, feedback_positions=fb_pos.copy(),
                       occluded_flags=occluded, feedback_pixels=fb_pix)


# -- PGM i/o -------------------------------------------------------------------

def save_pgm(image: np.ndarray, path):
    """Binary 8-bit P5 dump of a [0, 1] image."""
    h, w = image.shape
    data = np.rint(np.clip(image, 0.0, 1.0) * PGM_MAX).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{PGM_MAX}\n".encode("ascii"))
        fh.write(data.tobytes())


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise InvalidParam("not a binary PGM file")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / maxval
