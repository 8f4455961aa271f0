"""Synthetic point-cloud datasets and small file formats (XYZ, OFF, PLY).

The synthetic generator samples four analytic surface families (sphere,
cube, cylinder, torus) with per-cloud parameter jitter and optional Gaussian
noise. For segmentation, parts are analytic surface regions labeled before
noise is added, and each category's part labels occupy a contiguous global
range so the IoU bookkeeping matches how real part benchmarks are encoded.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .geometry import PointCloud

FAMILIES = ("sphere", "cube", "cylinder", "torus")

# parts per family: sphere top/bottom; cube x/y/z faces; cylinder
# side/top/bottom; torus outer/inner half
_PARTS_PER_FAMILY = {"sphere": 2, "cube": 3, "cylinder": 3, "torus": 2}


@dataclass
class Dataset:
    clouds: list[PointCloud]
    class_names: list[str]
    split: str = "train"
    task: str = "classification"
    part_ranges: dict[int, range] | None = None

    def __post_init__(self):
        for cloud in self.clouds:
            if cloud.category is not None and cloud.category >= len(self.class_names):
                raise DataError(f"cloud '{cloud.name}': category {cloud.category} "
                                f"outside {len(self.class_names)} classes")
            if self.task == "part_segmentation" and cloud.point_labels is None:
                raise DataError(f"cloud '{cloud.name}': segmentation cloud without labels")

    @property
    def num_parts(self) -> int:
        if self.part_ranges is None:
            return 0
        return max(r.stop for r in self.part_ranges.values())

    def __len__(self) -> int:
        return len(self.clouds)


def _sample_sphere(rng: np.random.Generator, n: int):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    labels = (v[:, 2] < 0).astype(np.int64)  # 0 = top hemisphere, 1 = bottom
    return v, labels


def _sample_cube(rng: np.random.Generator, n: int):
    half = 1.0 + rng.uniform(-0.15, 0.15, size=3)
    axis = rng.integers(0, 3, size=n)
    side = rng.choice([-1.0, 1.0], size=n)
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    pts[np.arange(n), axis] = side * half[axis]
    return pts, axis.astype(np.int64)  # part = face axis


def _sample_cylinder(rng: np.random.Generator, n: int):
    r = rng.uniform(0.45, 0.7)
    h = rng.uniform(1.4, 2.0)
    side_area = 2.0 * np.pi * r * h
    cap_area = np.pi * r * r
    probs = np.array([side_area, cap_area, cap_area])
    region = rng.choice(3, size=n, p=probs / probs.sum())  # 0 side, 1 top, 2 bottom
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    on_side = region == 0
    pts[on_side, 0] = r * np.cos(theta[on_side])
    pts[on_side, 1] = r * np.sin(theta[on_side])
    pts[on_side, 2] = rng.uniform(-h / 2, h / 2, size=int(on_side.sum()))
    caps = ~on_side
    rad = r * np.sqrt(rng.uniform(0.0, 1.0, size=int(caps.sum())))
    pts[caps, 0] = rad * np.cos(theta[caps])
    pts[caps, 1] = rad * np.sin(theta[caps])
    pts[caps, 2] = np.where(region[caps] == 1, h / 2, -h / 2)
    return pts, region.astype(np.int64)


def _sample_torus(rng: np.random.Generator, n: int):
    big = 1.0
    small = rng.uniform(0.25, 0.4)
    u = rng.uniform(0.0, 2.0 * np.pi, size=n)
    v = rng.uniform(0.0, 2.0 * np.pi, size=n)
    ring = big + small * np.cos(v)
    pts = np.stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(v)], axis=1)
    labels = (np.cos(v) < 0).astype(np.int64)  # 0 = outer half, 1 = inner half
    return pts, labels


_SAMPLERS = {"sphere": _sample_sphere, "cube": _sample_cube,
             "cylinder": _sample_cylinder, "torus": _sample_torus}


def part_ranges_for(families: list[str]) -> dict[int, range]:
    ranges, start = {}, 0
    for i, fam in enumerate(families):
        count = _PARTS_PER_FAMILY[fam]
        ranges[i] = range(start, start + count)
        start += count
    return ranges


def gen_synthetic(families: list[str], clouds_per_class: int, num_points: int,
                  noise: float, seed: int, task: str = "classification",
                  split: str = "train") -> Dataset:
    """Deterministic synthetic dataset; one class per surface family."""
    if not families:
        raise ConfigError("gen_synthetic: empty family list")
    unknown = [f for f in families if f not in _SAMPLERS]
    if unknown:
        raise ConfigError(f"gen_synthetic: unknown families {unknown} "
                          f"(choose from {list(FAMILIES)})")
    if noise < 0:
        raise ConfigError("gen_synthetic: noise must be >= 0")
    rng = np.random.default_rng([seed, hash_split(split)])
    ranges = part_ranges_for(list(families))
    clouds = []
    for ci, fam in enumerate(families):
        for j in range(clouds_per_class):
            pts, local = _SAMPLERS[fam](rng, num_points)
            pts = pts + rng.normal(0.0, noise, size=pts.shape) if noise > 0 else pts
            labels = local + ranges[ci].start if task == "part_segmentation" else None
            clouds.append(PointCloud(pts, point_labels=labels, category=ci,
                                     name=f"{fam}_{split}_{j}"))
    return Dataset(clouds, class_names=list(families), split=split, task=task,
                   part_ranges=ranges if task == "part_segmentation" else None)


def hash_split(split: str) -> int:
    # stable across processes, unlike hash()
    return int.from_bytes(split.encode("utf-8").ljust(4, b"\0")[:4], "little")


def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Center on the centroid and scale the farthest point onto the unit sphere."""
    centered = cloud.coords - cloud.coords.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius > 0:
        centered = centered / radius
    return PointCloud(centered, point_labels=cloud.point_labels,
                      category=cloud.category, name=cloud.name)


# ---------------------------------------------------------------------------
# file formats

def load_xyz(path: str | Path) -> PointCloud:
    """Whitespace-separated ``x y z [label]`` per line; blank lines ignored."""
    coords, labels = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) not in (3, 4):
                raise ParseError(f"expected 3 or 4 fields, got {len(parts)}", line=lineno)
            try:
                coords.append([float(v) for v in parts[:3]])
                if len(parts) == 4:
                    labels.append(int(parts[3]))
            except ValueError:
                raise ParseError(f"bad number in {parts!r}", line=lineno)
    if not coords:
        raise ParseError(f"{path}: no points")
    if labels and len(labels) != len(coords):
        raise ParseError(f"{path}: labels on some lines but not all")
    return PointCloud(np.array(coords), point_labels=np.array(labels) if labels else None,
                      name=Path(path).stem)


def write_xyz(cloud: PointCloud, path: str | Path) -> None:
    with open(path, "w") as f:
        for i in range(cloud.num_points):
            x, y, z = cloud.coords[i]
            line = f"{x:.9g} {y:.9g} {z:.9g}"
            if cloud.point_labels is not None:
                line += f" {cloud.point_labels[i]}"
            f.write(line + "\n")


def load_off(path: str | Path) -> PointCloud:
    """Vertices of an ASCII OFF mesh; faces are ignored."""
    with open(path) as f:
        lines = f.readlines()
    body = [(i + 1, ln.strip()) for i, ln in enumerate(lines)
            if ln.strip() and not ln.strip().startswith("#")]
    if not body:
        raise ParseError(f"{path}: empty file")
    lineno, header = body[0]
    if not header.startswith("OFF"):
        raise ParseError("missing OFF header", line=lineno)
    rest = header[3:].strip()
    if rest:  # counts glued onto the header line, a common file quirk
        counts, body = rest.split(), body[1:]
    else:
        if len(body) < 2:
            raise ParseError(f"{path}: missing count line")
        lineno, count_line = body[1]
        counts, body = count_line.split(), body[2:]
    if len(counts) < 2:
        raise ParseError("count line needs at least vertex and face counts", line=lineno)
    try:
        nv = int(counts[0])
    except ValueError:
        raise ParseError(f"bad vertex count {counts[0]!r}", line=lineno)
    if nv < 1:
        raise ParseError("no vertices", line=lineno)
    if len(body) < nv:
        raise ParseError(f"{path}: expected {nv} vertex lines, found {len(body)}")
    coords = np.empty((nv, 3))
    for i in range(nv):
        lineno, line = body[i]
        parts = line.split()
        if len(parts) < 3:
            raise ParseError(f"vertex needs 3 coordinates, got {len(parts)}", line=lineno)
        try:
            coords[i] = [float(v) for v in parts[:3]]
        except ValueError:
            raise ParseError(f"bad coordinate in {parts!r}", line=lineno)
    return PointCloud(coords, name=Path(path).stem)


def _build_palette() -> np.ndarray:
    """50 visually-spread, pairwise-distinct uint8 RGB colors."""
    import colorsys
    colors = []
    for i in range(50):
        hue = (i * 0.61803398875) % 1.0
        sat = 0.95 if i % 2 == 0 else 0.6
        val = 0.95 if i % 3 != 0 else 0.65
        rgb = colorsys.hsv_to_rgb(hue, sat, val)
        colors.append(tuple(int(round(255 * c)) for c in rgb))
    if len(set(colors)) != len(colors):  # pragma: no cover - construction guard
        raise AssertionError("palette collision")
    return np.array(colors, dtype=np.uint8)


PALETTE = _build_palette()


def write_colored_ply(cloud: PointCloud, labels: np.ndarray, path: str | Path) -> None:
    """ASCII PLY with one palette color per label."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (cloud.num_points,):
        raise DataError(f"labels must have length {cloud.num_points}")
    if labels.size and (labels.min() < 0 or labels.max() >= len(PALETTE)):
        raise DataError(f"labels must lie in [0, {len(PALETTE)})")
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {cloud.num_points}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        f.write("end_header\n")
        for (x, y, z), label in zip(cloud.coords, labels):
            r, g, b = PALETTE[label]
            f.write(f"{x:.9g} {y:.9g} {z:.9g} {r} {g} {b}\n")


def read_colored_ply(path: str | Path) -> tuple[PointCloud, np.ndarray]:
    """Inverse of ``write_colored_ply``: recover labels via the palette."""
    inverse = {tuple(c): i for i, c in enumerate(PALETTE)}
    with open(path) as f:
        lines = [ln.strip() for ln in f]
    if not lines or lines[0] != "ply":
        raise ParseError(f"{path}: not a PLY file", line=1)
    try:
        end = lines.index("end_header")
    except ValueError:
        raise ParseError(f"{path}: missing end_header")
    nv = None
    for ln in lines[:end]:
        if ln.startswith("element vertex"):
            nv = int(ln.split()[2])
    if nv is None:
        raise ParseError(f"{path}: no vertex element")
    coords = np.empty((nv, 3))
    labels = np.empty(nv, dtype=np.int64)
    for i in range(nv):
        lineno = end + 2 + i
        parts = lines[end + 1 + i].split()
        if len(parts) != 6:
            raise ParseError(f"expected 6 fields, got {len(parts)}", line=lineno)
        coords[i] = [float(v) for v in parts[:3]]
        color = tuple(int(v) for v in parts[3:])
        if color not in inverse:
            raise DataError(f"{path}: color {color} not in palette")
        labels[i] = inverse[color]
    return PointCloud(coords, name=Path(path).stem), labels


def load_cloud(path: str | Path) -> PointCloud:
    """Dispatch on extension: .xyz or .off."""
    suffix = Path(path).suffix.lower()
    if suffix == ".xyz":
        return load_xyz(path)
    if suffix == ".off":
        return load_off(path)
    raise DataError(f"{path}: unsupported point-cloud format '{suffix}'")


def load_directory_dataset(root: str | Path, split: str, num_points: int,
                           seed: int) -> Dataset:
    """Directory layout ``root/<split>/<class_name>/*.xyz|*.off``.

    Every cloud is resampled to ``num_points``; class names are the sorted
    subdirectory names.
    """
    from .geometry import sample_points
    base = Path(root) / split
    if not base.is_dir():
        raise DataError(f"dataset split directory {base} does not exist")
    class_dirs = sorted(d for d in base.iterdir() if d.is_dir())
    if not class_dirs:
        raise DataError(f"{base}: no class subdirectories")
    clouds, names = [], []
    for ci, d in enumerate(class_dirs):
        names.append(d.name)
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".xyz", ".off"))
        if not files:
            raise DataError(f"{d}: no .xyz or .off files")
        for j, p in enumerate(files):
            cloud = sample_points(load_cloud(p), num_points, seed=seed + j)
            cloud.category = ci
            clouds.append(cloud)
    return Dataset(clouds, class_names=names, split=split, task="classification")
