"""Synthetic phantoms standing in for annotated CT volumes.

``generate`` rasterizes an analytic shape and renders a noisy, blurred
image of it. ``corrupt_slicewise`` imitates contour-by-contour annotation by
growing or shrinking each z-slice independently, and ``inject_decoy`` plants
organ-like blobs away from the organ that carry no label.

All randomness comes from numpy's PCG64 generator seeded by the PhantomSpec, so
outputs are a pure function of their arguments.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .edt import signed_distance
from .errors import DomainError
from .volume import LabelVolume, ScalarVolume, Spacing

__all__ = ["PhantomSpec", "generate", "rasterize", "corrupt_slicewise", "inject_decoy", "rng_for"]

SHAPES = ("sphere", "ellipsoid", "two-lobe")
MARGIN_VOXELS = 2

# sub-streams of one seed, so image noise and decoys do not share draws
_NOISE_STREAM = 1
_DECOY_STREAM = 2
_CORRUPT_STREAM = 3


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry (mm), intensity model and seed of one phantom.

    ``centres`` and ``radii`` hold one entry per ellipsoid: one for
    ``sphere``/``ellipsoid`` and two for ``two-lobe``. A sphere takes its radius
    from ``radii[0][0]``. Centres default to the middle of the grid.
    """

    dims: tuple[int, int, int] = (16, 16, 16)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    shape: str = "sphere"
    centres: tuple = ()
    radii: tuple = ((5.0, 5.0, 5.0),)
    fg_mean: float = 1.0
    fg_std: float = 0.1
    bg_mean: float = 0.0
    bg_std: float = 0.1
    blur_mm: float = 0.0
    decoy_count: int = 0
    decoy_radius_mm: float = 1.5
    decoy_margin_mm: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise DomainError(f"unknown shape {self.shape!r}; choose from {SHAPES}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", Spacing.of(self.spacing).as_tuple())
        n_parts = 2 if self.shape == "two-lobe" else 1
        radii = tuple(tuple(float(r) for r in rr) for rr in self.radii)
        if self.shape == "sphere":
            radii = tuple((rr[0],) * 3 for rr in radii)
        if len(radii) != n_parts:
            raise DomainError(f"{self.shape} needs {n_parts} radius triple(s), got {len(radii)}")
        if any(r <= 0 for rr in radii for r in rr):
            raise DomainError("radii must be positive")
        centres = tuple(tuple(float(c) for c in cc) for cc in self.centres)
        if not centres:
            mid = tuple((n - 1) * s / 2.0 for n, s in zip(self.dims, self.spacing))
            centres = (mid,) * n_parts
        if len(centres) != n_parts:
            raise DomainError(f"{self.shape} needs {n_parts} centre(s), got {len(centres)}")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "centres", centres)
        for c, r in zip(centres, radii):
            for axis in range(3):
                lo = MARGIN_VOXELS * self.spacing[axis]
                hi = (self.dims[axis] - 1 - MARGIN_VOXELS) * self.spacing[axis]
                if c[axis] - r[axis] < lo or c[axis] + r[axis] > hi:
                    raise DomainError(f"shape does not fit in the grid with a {MARGIN_VOXELS}-voxel margin (axis {axis})")
        if self.decoy_count < 0 or self.decoy_radius_mm <= 0 or self.decoy_margin_mm < 0:
            raise DomainError("decoy count/radius/margin out of range")

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        obj = json.loads(text)
        if not isinstance(obj, dict):
            raise DomainError("phantom spec must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise DomainError(f"unknown phantom spec fields: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _centres_mm(spec: PhantomSpec) -> np.ndarray:
    axes = [np.arange(n) * s for n, s in zip(spec.dims, spec.spacing)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def rasterize(spec: PhantomSpec) -> np.ndarray:
    """Boolean organ mask: voxel centres inside any of the PhantomSpec ellipsoids."""
    pos = _centres_mm(spec)
    mask = np.zeros(spec.dims, dtype=bool)
    for c, r in zip(spec.centres, spec.radii):
        q = ((pos - np.array(c)) / np.array(r)) ** 2
        mask |= q.sum(axis=-1) <= 1.0
    return mask


def generate(spec: PhantomSpec) -> tuple[ScalarVolume, LabelVolume]:
    mask = rasterize(spec)
    rng = rng_for(spec.seed, _NOISE_STREAM)
    img = np.where(mask, spec.fg_mean, spec.bg_mean).astype(np.float64)
    if spec.blur_mm > 0:
        sigma = [spec.blur_mm / s for s in spec.spacing]
        img = ndimage.gaussian_filter(img, sigma=sigma, mode="nearest")
    noise = rng.standard_normal(spec.dims)
    img = img + noise * np.where(mask, spec.fg_std, spec.bg_std)
    spacing = Spacing.of(spec.spacing)
    return ScalarVolume(img, spacing), LabelVolume(mask.astype(np.uint8), spacing, 1)


_CROSS = ndimage.generate_binary_structure(2, 1)


def _resize_slice(sl: np.ndarray, r: int) -> np.ndarray:
    if r > 0:
        return ndimage.binary_dilation(sl, _CROSS, iterations=r)
    while r < 0:
        out = ndimage.binary_erosion(sl, _CROSS, iterations=-r, border_value=0)
        if out.any():
            return out
        r += 1
    return sl


def corrupt_slicewise(labels: LabelVolume, magnitude: int, seed: int) -> LabelVolume:
    """Grow or shrink every z-slice of every class by ``0..magnitude`` voxels.

    Non-empty slices stay non-empty: an erosion that would wipe a slice out is
    weakened until something survives.
    """
    if magnitude < 0:
        raise DomainError(f"magnitude must be non-negative, got {magnitude}")
    if magnitude == 0:
        return labels
    rng = rng_for(seed, _CORRUPT_STREAM)
    out = np.zeros_like(labels.data)
    nz = labels.dims[2]
    for c in range(1, labels.num_classes + 1):
        mask = labels.data == c
        steps = rng.integers(-magnitude, magnitude + 1, size=nz)
        for z in range(nz):
            if mask[:, :, z].any():
                grown = _resize_slice(mask[:, :, z], int(steps[z]))
                out[:, :, z][grown] = c
    return LabelVolume(out, labels.spacing, labels.num_classes)


def inject_decoy(image: ScalarVolume, spec: PhantomSpec) -> ScalarVolume:
    """Paint ``spec.decoy_count`` foreground-intensity balls far from the organ.

    Each decoy centre sits at least ``decoy_margin_mm`` from the organ and
    fully inside the grid. Decoy voxels are drawn from the foreground
    intensity distribution; the label map is untouched.
    """
    if spec.decoy_count == 0:
        return image
    if image.dims != spec.dims:
        raise DomainError(f"image dims {image.dims} do not match spec dims {spec.dims}")
    rng = rng_for(spec.seed, _DECOY_STREAM)
    organ = rasterize(spec)
    dist, _ = signed_distance(organ, spec.spacing)
    pos = _centres_mm(spec)
    extent = (np.array(spec.dims) - 1) * np.array(spec.spacing)
    r = spec.decoy_radius_mm
    inside_grid = np.all((pos >= r) & (pos <= extent - r), axis=-1)
    candidates = np.argwhere(inside_grid & (dist >= spec.decoy_margin_mm))
    if len(candidates) == 0:
        raise DomainError("no room for decoys at the requested margin")
    img = np.array(image.data, dtype=np.float64)
    taken = np.zeros(spec.dims, dtype=bool)
    for idx in rng.permutation(len(candidates))[: spec.decoy_count]:
        centre = pos[tuple(candidates[idx])]
        ball = ((pos - centre) ** 2).sum(axis=-1) <= r * r
        taken |= ball
    img[taken] = spec.fg_mean + spec.fg_std * rng.standard_normal(int(taken.sum()))
    return ScalarVolume(img, image.spacing)
