"""Feature extraction from observed particles and rendered images.

Manual features operate on marked (Feedback) particle positions; the
histogram-of-wavelets (HOW) feature pools Gabor filter responses of the
foreground over coarse-to-fine grids.  All extractors are pure: the same
input yields the bit-identical output.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (ConfigMismatch, CountMismatch, DegenerateNeighborhood,
                     EmptyInput, InvalidParam, LayoutMismatch)


@dataclass
class FeatureVector:
    values: np.ndarray                      # (d,)
    layout: list                            # [(name, offset, length), ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        total = sum(l for _, _, l in self.layout)
        if total != len(self.values):
            raise InvalidParam("layout does not cover the value vector")

    def chunk(self, name: str) -> np.ndarray:
        for nm, off, ln in self.layout:
            if nm == name:
                return self.values[off:off + ln]
        raise InvalidParam(f"no feature chunk named {name!r}")

    def names(self):
        return [nm for nm, _, _ in self.layout]


def concat_features(parts) -> FeatureVector:
    values = []
    layout = []
    off = 0
    for p in parts:
        for nm, o, ln in p.layout:
            layout.append((nm, off + o, ln))
        values.append(p.values)
        off += len(p.values)
    return FeatureVector(np.concatenate(values) if values else np.zeros(0), layout)


def _single(name, values) -> FeatureVector:
    values = np.asarray(values, dtype=np.float64).ravel()
    return FeatureVector(values, [(name, 0, len(values))])


# -- manual features -----------------------------------------------------------

def centroid(points: np.ndarray) -> FeatureVector:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyInput("centroid of zero points")
    return _single("centroid", points.mean(axis=0))


def stacked_positions(points: np.ndarray, expected: int = None) -> FeatureVector:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyInput("no points to stack")
    if expected is not None and len(points) != expected:
        raise CountMismatch(f"observed {len(points)} points, configured {expected}")
    return _single("positions", points.ravel())


def pairwise_distance(p1, p2, squared: bool = True) -> FeatureVector:
    """Distance between two marked points; the squared form is the default."""
    d = np.asarray(p1, dtype=np.float64) - np.asarray(p2, dtype=np.float64)
    v = float(d @ d)
    if not squared:
        v = math.sqrt(v)
    return _single("distance", [v])


def _eig3_sym(c: np.ndarray):
    """Ascending eigenvalues of a symmetric 3x3 matrix, closed form."""
    p1 = c[0, 1] ** 2 + c[0, 2] ** 2 + c[1, 2] ** 2
    q = (c[0, 0] + c[1, 1] + c[2, 2]) / 3.0
    p2 = (c[0, 0] - q) ** 2 + (c[1, 1] - q) ** 2 + (c[2, 2] - q) ** 2 + 2.0 * p1
    p = math.sqrt(max(p2 / 6.0, 0.0))
    if p < 1e-30:
        return q, q, q
    b = (c - q * np.eye(3)) / p
    r = float(np.linalg.det(b)) / 2.0
    r = min(1.0, max(-1.0, r))
    phi = math.acos(r) / 3.0
    hi = q + 2.0 * p * math.cos(phi)
    lo = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    mid = 3.0 * q - hi - lo
    return lo, mid, hi


def surface_variation(points: np.ndarray) -> FeatureVector:
    """sigma = l0 / (l0 + l1 + l2) of the neighborhood covariance, in [0, 1/3]."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 4:
        raise DegenerateNeighborhood(
            f"surface variation needs >= 4 points, got {len(points)}")
    d = points - points.mean(axis=0)
    cov = (d.T @ d) / len(points)
    lo, mid, hi = _eig3_sym(cov)
    total = lo + mid + hi
    if total <= 0.0:
        raise DegenerateNeighborhood("all neighborhood points coincide")
    # numerical guard: clamp into the mathematically valid range
    return _single("sv", [min(max(lo / total, 0.0), 1.0 / 3.0)])


def angular_histogram(points, normals, bins: int = 9) -> FeatureVector:
    """Normalized histogram over [0, pi] of angles between the normal of the
    point nearest the centroid and every other normal."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyInput("angular histogram of zero points")
    if len(points) != len(normals):
        raise CountMismatch(f"{len(points)} points vs {len(normals)} normals")
    if bins < 1:
        raise InvalidParam("bins must be >= 1")
    if len(points) < 2:
        raise DegenerateNeighborhood("angular histogram needs >= 2 points")
    ctr = points.mean(axis=0)
    center_idx = int(np.argmin(np.sum((points - ctr) ** 2, axis=1)))
    nc = normals[center_idx]
    nc = nc / np.linalg.norm(nc)
    hist = np.zeros(bins)
    for i in range(len(points)):
        if i == center_idx:
            continue
        ni = normals[i] / np.linalg.norm(normals[i])
        ang = math.acos(min(1.0, max(-1.0, float(nc @ ni))))
        b = min(int(ang / math.pi * bins), bins - 1)
        hist[b] += 1.0
    hist /= hist.sum()
    return _single("anghist", hist)


def estimate_normals(points: np.ndarray, k: int = 6) -> np.ndarray:
    """Per-point unit normals from the smallest principal axis of the
    k-nearest-neighbor covariance."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n < 4:
        raise DegenerateNeighborhood("normal estimation needs >= 4 points")
    k = min(k, n - 1)
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    normals = np.zeros((n, 3))
    for i in range(n):
        nb = np.argsort(d2[i])[:k + 1]
        q = points[nb] - points[nb].mean(axis=0)
        cov = q.T @ q
        w, v = np.linalg.eigh(cov)
        normals[i] = v[:, 0]
        if normals[i, 2] < 0:
            normals[i] = -normals[i]
    return normals


# -- Gabor / HOW ---------------------------------------------------------------

def gabor_kernel(wavelength: float, theta: float, phase: float = math.pi / 2,
                 gamma: float = 1.0, sigma: float = None, side: int = None) -> np.ndarray:
    """Gabor kernel g(x, y) = exp(-(x'^2 + gamma^2 y'^2) / (2 sigma^2))
    * sin(2 pi x' / wavelength + phase), sampled on a centered odd integer
    lattice (x along columns, y along rows)."""
    if wavelength <= 0:
        raise InvalidParam("wavelength must be positive")
    if sigma is None:
        sigma = 0.5 * wavelength
    if sigma <= 0:
        raise InvalidParam("sigma must be positive")
    if side is None:
        side = 2 * int(math.ceil(2.0 * sigma)) + 1
    if side < 1 or side % 2 == 0:
        raise InvalidParam("side must be a positive odd integer")
    half = side // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    env = np.exp(-(xr ** 2 + gamma ** 2 * yr ** 2) / (2.0 * sigma ** 2))
    return env * np.sin(2.0 * math.pi * xr / wavelength + phase)


@dataclass
class GaborBank:
    kernels: list                           # list of 2D arrays
    names: list                             # one per kernel

    def __len__(self):
        return len(self.kernels)


def default_bank() -> GaborBank:
    """4 orientations x 2 wavelengths (4 and 8 px), phase pi/2, sigma = lambda/2."""
    ks, names = [], []
    for lam in (4.0, 8.0):
        for j, th in enumerate((0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)):
            ks.append(gabor_kernel(lam, th))
            names.append(f"l{int(lam)}o{j}")
    return GaborBank(ks, names)


@dataclass
class HowConfig:
    grid_sizes: tuple = (8, 16)
    magnitude: bool = False                 # pool |response| instead of signed
    bank: GaborBank = field(default_factory=default_bank)

    def length_for(self, width: int, height: int) -> int:
        cells = sum((-(-width // g)) * (-(-height // g)) for g in self.grid_sizes)
        return len(self.bank) * cells


def how_deployed_config() -> tuple:
    """Configuration matching the deployed 768-dimensional feature:
    the default 8-filter bank pooled on an 8 px grid over 96x64 images."""
    return HowConfig(grid_sizes=(8,)), 96, 64


def how_features(image: np.ndarray, mask: np.ndarray, cfg: HowConfig) -> FeatureVector:
    """Per filter and grid size, sum filter responses of foreground pixels
    into cell (w//g, h//g); cells stack row-major, grids then filters
    outermost."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    if image.ndim != 2 or mask.shape != image.shape:
        raise ConfigMismatch("image and mask must be equal-shaped 2D arrays")
    if any(g < 1 for g in cfg.grid_sizes) or len(cfg.grid_sizes) == 0:
        raise ConfigMismatch("grid sizes must be positive")
    h, w = image.shape
    resp = np.empty((len(cfg.bank), h, w))
    for i, k in enumerate(cfg.bank.kernels):
        resp[i] = kernels.conv2d_same(image, k)
    if cfg.magnitude:
        resp = np.abs(resp)
    vec = kernels.how_accumulate(resp, mask.astype(np.uint8),
                                 np.asarray(cfg.grid_sizes, dtype=np.int64))
    layout = []
    off = 0
    for i in range(len(cfg.bank)):
        for g in cfg.grid_sizes:
            ln = (-(-w // g)) * (-(-h // g))
            layout.append((f"how[{cfg.bank.names[i]},g{g}]", off, ln))
            off += ln
    return FeatureVector(vec, layout)


# -- recipes -------------------------------------------------------------------

RECIPE_NAMES = ("centroid", "positions", "distance", "surface-variation",
                "angular-histogram", "how")


def recipe_needs_image(recipe) -> bool:
    return any(name == "how" for name, _ in recipe)


def extract(recipe, feedback_positions=None, image=None, mask=None) -> FeatureVector:
    """Run an ordered extractor recipe: list of (name, params) pairs.

    Manual extractors read feedback_positions; "how" reads image and mask.
    """
    parts = []
    for name, params in recipe:
        params = params or {}
        if name == "how":
            parts.append(how_features(image, mask, params.get("config", HowConfig())))
            continue
        fp = feedback_positions
        if fp is None:
            raise EmptyInput(f"extractor {name!r} needs feedback positions")
        if name == "centroid":
            parts.append(centroid(fp))
        elif name == "positions":
            parts.append(stacked_positions(fp, params.get("count")))
        elif name == "distance":
            i = params.get("i", 0)
            j = params.get("j", -1)
            parts.append(pairwise_distance(fp[i], fp[j],
                                           squared=params.get("squared", True)))
        elif name == "surface-variation":
            parts.append(surface_variation(fp))
        elif name == "angular-histogram":
            normals = estimate_normals(fp, params.get("k", 6))
            parts.append(angular_histogram(fp, normals, params.get("bins", 9)))
        else:
            raise InvalidParam(f"unknown extractor {name!r}")
    return concat_features(parts)


# -- comparison ------------------------------------------------------------------

def feature_distance(a: FeatureVector, b: FeatureVector, weights: dict = None) -> float:
    """Euclidean distance; optionally per-feature weighted by name."""
    if a.layout != b.layout:
        raise LayoutMismatch("feature vectors have different layouts")
    if weights is None:
        d = a.values - b.values
        return float(np.sqrt(d @ d))
    acc = 0.0
    for nm, off, ln in a.layout:
        w = weights.get(nm, 1.0)
        d = a.values[off:off + ln] - b.values[off:off + ln]
        acc += w * float(d @ d)
    return float(np.sqrt(acc))


# -- CSV ---------------------------------------------------------------------

def features_to_csv(vectors, path):
    """Rows of values under a header naming each (featureName, index) column."""
    if not vectors:
        raise EmptyInput("no feature vectors to write")
    layout = vectors[0].layout
    header = []
    for nm, _, ln in layout:
        header.extend(f"{nm}[{i}]" for i in range(ln))
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for v in vectors:
            if v.layout != layout:
                raise LayoutMismatch("mixed layouts in one CSV")
            fh.write(",".join(repr(float(x)) for x in v.values) + "\n")


def features_from_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        layout = []
        for col in header:
            nm = col[:col.rindex("[")]
            if layout and layout[-1][0] == nm:
                layout[-1] = (nm, layout[-1][1], layout[-1][2] + 1)
            else:
                off = layout[-1][1] + layout[-1][2] if layout else 0
                layout.append((nm, off, 1))
        vecs = []
        for line in fh:
            if line.strip():
                vals = np.array([float(x) for x in line.strip().split(",")])
                vecs.append(FeatureVector(vals, list(layout)))
    return vecs
