"""Synthetic surface dataset: sampling, patch extraction, augmentation and I/O.

Surfaces are parametric (sphere, torus, box, cylinder) with analytic areas
and area-uniform samplers, chosen to include sharp edges (box corners,
cylinder rims) alongside smooth regions. Training examples are local
patches: the gt_size nearest points around a seed point, normalized to a
centroid at the origin and a maximum radius of 1, with the transform
recorded so outputs can be mapped back to model scale. Inputs are random
subsets of the ground truth, redrawn every iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, _as_points


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# parametric surfaces


class Sphere:
    kind = "sphere"

    def __init__(self, radius: float = 1.0):
        if radius <= 0:
            raise ValueError("sphere radius must be positive")
        self.radius = float(radius)

    @property
    def params(self):
        return {"radius": self.radius}

    def area(self) -> float:
        return 4.0 * math.pi * self.radius ** 2

    def sample(self, count: int, rng) -> np.ndarray:
        # area-uniform via uniform z (Archimedes) and uniform azimuth
        z = rng.uniform(-self.radius, self.radius, count)
        phi = rng.uniform(0.0, 2.0 * math.pi, count)
        rho = np.sqrt(np.maximum(self.radius ** 2 - z ** 2, 0.0))
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


class Torus:
    kind = "torus"

    def __init__(self, major: float = 1.0, minor: float = 0.4):
        if minor <= 0 or major <= minor:
            raise ValueError("torus needs major > minor > 0")
        self.major = float(major)
        self.minor = float(minor)

    @property
    def params(self):
        return {"major": self.major, "minor": self.minor}

    def area(self) -> float:
        return 4.0 * math.pi ** 2 * self.major * self.minor

    def sample(self, count: int, rng) -> np.ndarray:
        # the area element carries a (major + minor*cos theta) factor:
        # sample the tube angle by rejection against it
        out = np.empty((count, 3))
        have = 0
        while have < count:
            draw = max(count - have, 64)
            theta = rng.uniform(0.0, 2.0 * math.pi, draw)
            accept = rng.uniform(0.0, 1.0, draw) < (
                (self.major + self.minor * np.cos(theta)) / (self.major + self.minor)
            )
            theta = theta[accept][: count - have]
            phi = rng.uniform(0.0, 2.0 * math.pi, theta.shape[0])
            ring = self.major + self.minor * np.cos(theta)
            out[have : have + theta.shape[0]] = np.column_stack(
                [ring * np.cos(phi), ring * np.sin(phi), self.minor * np.sin(theta)]
            )
            have += theta.shape[0]
        return out


class Box:
    kind = "box"

    def __init__(self, a: float = 1.0, b: float = 1.0, c: float = 1.0):
        if min(a, b, c) <= 0:
            raise ValueError("box edge lengths must be positive")
        self.a, self.b, self.c = float(a), float(b), float(c)

    @property
    def params(self):
        return {"a": self.a, "b": self.b, "c": self.c}

    def area(self) -> float:
        return 2.0 * (self.a * self.b + self.b * self.c + self.a * self.c)

    def sample(self, count: int, rng) -> np.ndarray:
        a, b, c = self.a, self.b, self.c
        face_areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
        faces = rng.choice(6, size=count, p=face_areas / face_areas.sum())
        u = rng.uniform(-0.5, 0.5, count)
        v = rng.uniform(-0.5, 0.5, count)
        pts = np.empty((count, 3))
        for f in range(6):
            m = faces == f
            axis = f // 2
            sign = 1.0 if f % 2 == 0 else -1.0
            dims = [a, b, c]
            others = [i for i in range(3) if i != axis]
            pts[m, axis] = sign * dims[axis] / 2.0
            pts[m, others[0]] = u[m] * dims[others[0]]
            pts[m, others[1]] = v[m] * dims[others[1]]
        return pts


class Cylinder:
    kind = "cylinder"

    def __init__(self, radius: float = 0.5, height: float = 1.5):
        if radius <= 0 or height <= 0:
            raise ValueError("cylinder radius and height must be positive")
        self.radius = float(radius)
        self.height = float(height)

    @property
    def params(self):
        return {"radius": self.radius, "height": self.height}

    def area(self) -> float:
        return 2.0 * math.pi * self.radius * self.height + 2.0 * math.pi * self.radius ** 2

    def sample(self, count: int, rng) -> np.ndarray:
        r, h = self.radius, self.height
        lateral = 2.0 * math.pi * r * h
        cap = math.pi * r ** 2
        part = rng.choice(3, size=count, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
        phi = rng.uniform(0.0, 2.0 * math.pi, count)
        pts = np.empty((count, 3))
        side = part == 0
        pts[side, 0] = r * np.cos(phi[side])
        pts[side, 1] = r * np.sin(phi[side])
        pts[side, 2] = rng.uniform(-h / 2.0, h / 2.0, int(side.sum()))
        for which, z in ((1, h / 2.0), (2, -h / 2.0)):
            m = part == which
            rho = r * np.sqrt(rng.uniform(0.0, 1.0, int(m.sum())))
            pts[m, 0] = rho * np.cos(phi[m])
            pts[m, 1] = rho * np.sin(phi[m])
            pts[m, 2] = z
        return pts


SURFACE_KINDS = {cls.kind: cls for cls in (Sphere, Torus, Box, Cylinder)}


def make_surface(kind: str, **params):
    if kind not in SURFACE_KINDS:
        raise ValueError(f"unknown surface kind {kind!r}; choose from {sorted(SURFACE_KINDS)}")
    try:
        return SURFACE_KINDS[kind](**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for surface {kind!r}: {exc}") from None


def sample_surface(model, count: int, rng_seed) -> PointCloud:
    """Area-uniform sample of the surface; deterministic under the seed."""
    if count < 1:
        raise ValueError("count must be positive")
    return PointCloud(model.sample(count, _rng(rng_seed)))


# ---------------------------------------------------------------------------
# patches


@dataclass(frozen=True)
class Patch:
    """A normalized training example: ground truth plus its normalization record.

    Inputs are not stored; they are drawn from the ground truth (the input
    pool) each iteration via ``subsample_input``.
    """

    gt: PointCloud
    center: np.ndarray
    scale: float

    @property
    def input_pool(self) -> PointCloud:
        return self.gt

    def denormalize(self, points) -> np.ndarray:
        return _as_points(points) * self.scale + self.center


def normalize_cloud(points) -> tuple[np.ndarray, np.ndarray, float]:
    """Center on the centroid and scale the farthest point to radius 1."""
    pts = _as_points(points)
    center = pts.mean(axis=0)
    centered = pts - center
    scale = float(np.sqrt((centered ** 2).sum(axis=1).max()))
    if scale == 0.0:
        raise ValueError("degenerate cloud: all points coincide")
    return centered / scale, center, scale


def extract_patch(model_cloud, seed_point_index: int, gt_size: int = 4096) -> Patch:
    """The gt_size nearest points around a seed point, unit-normalized.

    Ties in the distance ordering are broken by the smaller index, so the
    extraction is deterministic.
    """
    pts = _as_points(model_cloud)
    n = pts.shape[0]
    if gt_size < 1 or gt_size > n:
        raise ValueError(f"gt_size={gt_size} exceeds cloud size {n}")
    if not 0 <= seed_point_index < n:
        raise ValueError("seed_point_index out of range")
    d = ((pts - pts[seed_point_index]) ** 2).sum(axis=1)
    order = np.argsort(d, kind="stable")[:gt_size]
    normalized, center, scale = normalize_cloud(pts[order])
    return Patch(gt=PointCloud(normalized), center=center, scale=scale)


def subsample_input(patch: Patch, m: int = 1024, rng_seed=0) -> PointCloud:
    """Uniform m-subset of the patch's input pool, without replacement."""
    pool = patch.input_pool.points
    if m < 1 or m > pool.shape[0]:
        raise ValueError(f"cannot draw m={m} from a pool of {pool.shape[0]}")
    idx = _rng(rng_seed).choice(pool.shape[0], size=m, replace=False)
    return PointCloud(pool[idx])


# ---------------------------------------------------------------------------
# augmentation and noise


@dataclass(frozen=True)
class AugmentConfig:
    rotate: bool = True
    shift: float = 0.1
    scale_min: float = 0.8
    scale_max: float = 1.2

    def __post_init__(self):
        if self.shift < 0 or self.scale_min <= 0 or self.scale_max < self.scale_min:
            raise ValueError("invalid augmentation ranges")

    def is_identity(self) -> bool:
        return not self.rotate and self.shift == 0.0 and self.scale_min == self.scale_max == 1.0


IDENTITY_AUGMENT = AugmentConfig(rotate=False, shift=0.0, scale_min=1.0, scale_max=1.0)


def random_rotation(rng) -> np.ndarray:
    """Rotation matrix drawn uniformly from the rotation group (via a random unit quaternion)."""
    q = rng.normal(size=4)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def augment(input_cloud, gt_cloud, rng_seed, config: AugmentConfig = AugmentConfig()):
    """Apply one random similarity transform identically to both clouds.

    x' = scale * R x + t. Components configured as identity are skipped
    entirely, so the identity configuration reproduces the inputs
    bit-exactly.
    """
    a = _as_points(input_cloud)
    b = _as_points(gt_cloud)
    rng = _rng(rng_seed)
    if config.rotate:
        rot = random_rotation(rng)
        a = a @ rot.T
        b = b @ rot.T
    if config.scale_min != 1.0 or config.scale_max != 1.0:
        s = rng.uniform(config.scale_min, config.scale_max)
        a = a * s
        b = b * s
    if config.shift != 0.0:
        t = rng.uniform(-config.shift, config.shift, 3)
        a = a + t
        b = b + t
    return PointCloud(a), PointCloud(b)


def add_gaussian_noise(cloud, sigma: float = 0.01, rng_seed=0) -> PointCloud:
    """Isotropic per-coordinate Gaussian perturbation (noisy-input experiments)."""
    pts = _as_points(cloud)
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0.0:
        return PointCloud(pts)
    return PointCloud(pts + _rng(rng_seed).normal(0.0, sigma, pts.shape))


# ---------------------------------------------------------------------------
# file I/O

_FLOAT_FMT = "%.9g"


def _format_point(p) -> str:
    return " ".join(_FLOAT_FMT % v for v in p)


def _parse_triple(tokens, path, lineno) -> list:
    if len(tokens) != 3:
        raise ValueError(f"{path}:{lineno}: expected 3 coordinates, got {len(tokens)}")
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ValueError(f"{path}:{lineno}: cannot parse coordinates {tokens!r}") from None


def write_cloud(cloud, path, fmt: str = None) -> None:
    """Write a cloud as ASCII xyz or ply (inferred from the suffix by default)."""
    pts = _as_points(cloud)
    fmt = fmt or _infer_format(path)
    with open(path, "w") as fh:
        if fmt == "xyz":
            for p in pts:
                fh.write(_format_point(p) + "\n")
        elif fmt == "ply":
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {pts.shape[0]}\n")
            fh.write("property double x\nproperty double y\nproperty double z\n")
            fh.write("end_header\n")
            for p in pts:
                fh.write(_format_point(p) + "\n")
        else:
            raise ValueError(f"unsupported format {fmt!r} (use 'xyz' or 'ply')")


def _infer_format(path) -> str:
    name = str(path).lower()
    if name.endswith(".ply"):
        return "ply"
    return "xyz"


def read_cloud(path, fmt: str = None) -> PointCloud:
    """Read an ASCII xyz or ply file; errors name the offending line."""
    fmt = fmt or _infer_format(path)
    if fmt == "xyz":
        return _read_xyz(path)
    if fmt == "ply":
        return _read_ply(path)
    raise ValueError(f"unsupported format {fmt!r} (use 'xyz' or 'ply')")


def _read_xyz(path) -> PointCloud:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            rows.append(_parse_triple(tokens, path, lineno))
    if not rows:
        raise ValueError(f"{path}: no points found")
    return PointCloud(np.array(rows))


_PLY_FLOAT_TYPES = {"float", "double", "float32", "float64"}


def _read_ply(path) -> PointCloud:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}:1: not a PLY file (missing 'ply' magic)")
    count = None
    props = []
    in_vertex = False
    body_start = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1:] != ["ascii", "1.0"]:
                raise ValueError(f"{path}:{lineno}: only 'format ascii 1.0' is supported")
        elif tokens[0] == "element":
            if tokens[1] == "vertex":
                in_vertex = True
                count = int(tokens[2])
            else:
                raise ValueError(f"{path}:{lineno}: unsupported PLY element {tokens[1]!r}")
        elif tokens[0] == "property":
            if not in_vertex:
                raise ValueError(f"{path}:{lineno}: property outside a vertex element")
            if len(tokens) != 3 or tokens[1] not in _PLY_FLOAT_TYPES:
                raise ValueError(f"{path}:{lineno}: unsupported property {raw.strip()!r}")
            props.append(tokens[2])
        elif tokens[0] == "end_header":
            body_start = lineno + 1
            break
        else:
            raise ValueError(f"{path}:{lineno}: unrecognized header line {raw.strip()!r}")
    if body_start is None:
        raise ValueError(f"{path}: missing end_header")
    if count is None:
        raise ValueError(f"{path}: missing vertex element")
    if props != ["x", "y", "z"]:
        raise ValueError(f"{path}: vertex properties must be exactly x, y, z; got {props}")
    body = lines[body_start - 1 : body_start - 1 + count]
    if len(body) < count:
        raise ValueError(f"{path}: expected {count} vertex lines, found {len(body)}")
    rows = []
    for offset, raw in enumerate(body):
        rows.append(_parse_triple(raw.split(), path, body_start + offset))
    return PointCloud(np.array(rows))


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestEntry:
    kind: str
    params: dict
    patches: int
    seed: int
    split: str

    def surface(self):
        return make_surface(self.kind, **self.params)

    def identity(self):
        return (self.kind, tuple(sorted(self.params.items())))


_RESERVED_KEYS = {"patches", "seed", "split"}
_SPLITS = {"train", "test"}


def parse_manifest(text: str, source: str = "<manifest>") -> list:
    """Parse `kind key=value ...` lines into manifest entries.

    '#' starts a comment; kind comes first; `patches`, `seed` and `split`
    are reserved keys, everything else is a surface parameter. The same
    surface (kind plus parameters) may not appear in both splits.
    """
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kind = tokens[0]
        params = {}
        patches, seed, split = 1, 0, "train"
        for tok in tokens[1:]:
            if "=" not in tok:
                raise ValueError(f"{source}:{lineno}: expected key=value, got {tok!r}")
            key, val = tok.split("=", 1)
            if key == "patches":
                patches = int(val)
            elif key == "seed":
                seed = int(val)
            elif key == "split":
                if val not in _SPLITS:
                    raise ValueError(f"{source}:{lineno}: split must be train or test, got {val!r}")
                split = val
            else:
                try:
                    params[key] = float(val)
                except ValueError:
                    raise ValueError(f"{source}:{lineno}: bad numeric value {tok!r}") from None
        if patches < 1:
            raise ValueError(f"{source}:{lineno}: patches must be positive")
        try:
            make_surface(kind, **params)  # validate early with the line number
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
        entries.append(ManifestEntry(kind, params, patches, seed, split))
    if not entries:
        raise ValueError(f"{source}: empty manifest")
    by_split = {"train": set(), "test": set()}
    for e in entries:
        by_split[e.split].add(e.identity())
    overlap = by_split["train"] & by_split["test"]
    if overlap:
        raise ValueError(f"{source}: surfaces appear in both splits: {sorted(overlap)}")
    return entries


def load_manifest(path) -> list:
    with open(path) as fh:
        return parse_manifest(fh.read(), source=str(path))


def generate_entry_patches(entry: ManifestEntry, surface_points: int = 20000,
                           gt_size: int = 4096, reference_factor: int = 0):
    """Materialize one manifest entry: list of (patch, dense reference or None).

    The reference, when requested, is a reference_factor-times denser
    sample of the same region, mapped into the patch's normalized frame.
    """
    surface = entry.surface()
    seeds = np.random.SeedSequence([entry.seed, 0xD5]).spawn(3)
    cloud = sample_surface(surface, surface_points, np.random.default_rng(seeds[0]))
    picker = np.random.default_rng(seeds[1])
    ref_cloud = None
    if reference_factor > 0:
        ref_cloud = sample_surface(
            surface, reference_factor * surface_points, np.random.default_rng(seeds[2])
        )
    out = []
    for _ in range(entry.patches):
        seed_idx = int(picker.integers(len(cloud)))
        patch = extract_patch(cloud, seed_idx, gt_size)
        reference = None
        if ref_cloud is not None:
            seed_pt = cloud.points[seed_idx]
            d = ((ref_cloud.points - seed_pt) ** 2).sum(axis=1)
            order = np.argsort(d, kind="stable")[: reference_factor * gt_size]
            reference = PointCloud((ref_cloud.points[order] - patch.center) / patch.scale)
        out.append((patch, reference))
    return out
