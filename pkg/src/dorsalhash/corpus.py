"""Image ingestion, augmentation and synthetic corpus generation.

On disk a dataset is ``root/<subject_id>/<sample>.pgm``: one directory per
subject, binary 8-bit PGM (P5) samples, lexicographic order defining the
sample sequence.  PNG files are accepted too when Pillow is installed.
Pixels are handled as float64 in [0, 1] everywhere past the loaders.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import rand
from .errors import DataError, DimensionError, IngestionError

IMAGE_SUFFIXES = (".pgm", ".png")


# -- PGM (P5) ----------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def _read_pgm_tokens(blob: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    for _ in range(count):
        m = _PGM_TOKEN.match(blob, pos)
        if not m:
            raise IngestionError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit P5 file into a float64 grid scaled to [0, 1]."""
    blob = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), pos = _read_pgm_tokens(blob, 4)
        if magic != b"P5":
            raise IngestionError(f"{path}: not a P5 PGM (magic {magic!r})")
        width, height, mv = int(w), int(h), int(maxval)
    except IngestionError:
        raise
    except Exception as exc:
        raise IngestionError(f"{path}: malformed PGM header ({exc})") from exc
    if mv != 255:
        raise IngestionError(f"{path}: only maxval 255 is supported, got {mv}")
    data = blob[pos + 1:pos + 1 + width * height]
    if len(data) != width * height:
        raise IngestionError(f"{path}: pixel payload truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).astype(np.float64) / 255.0


def write_pgm(path, grid: np.ndarray) -> None:
    """Write a [0, 1] float grid as binary 8-bit P5 (round-to-nearest)."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2:
        raise DimensionError(f"PGM output must be 2-D, got shape {g.shape}")
    pixels = np.clip(np.rint(g * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def load_image(path) -> np.ndarray:
    """Load a grayscale image (PGM natively; PNG via Pillow) as [0, 1] floats."""
    p = Path(path)
    if p.suffix.lower() == ".pgm":
        return read_pgm(p)
    if p.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:
            raise IngestionError(f"{p}: PNG support requires Pillow") from exc
        try:
            with Image.open(p) as im:
                arr = np.asarray(im.convert("L"), dtype=np.float64)
        except Exception as exc:
            raise IngestionError(f"{p}: cannot decode PNG ({exc})") from exc
        return arr / 255.0
    raise IngestionError(f"{p}: unsupported image type {p.suffix!r}")


# -- geometry ----------------------------------------------------------------


def bilinear_sample(grid: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample grid at float coordinates with bilinear weights, edge-clamped.

    Integer coordinates reproduce grid values exactly, so identity warps
    are lossless.
    """
    g = np.asarray(grid, dtype=np.float64)
    h, w = g.shape
    y = np.clip(ys, 0.0, h - 1.0)
    x = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(y).astype(int)
    x0 = np.floor(x).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = y - y0
    fx = x - x0
    top = g[y0, x0] * (1.0 - fx) + g[y0, x1] * fx
    bot = g[y1, x0] * (1.0 - fx) + g[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize with bilinear interpolation (pixel-center alignment)."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2:
        raise DimensionError(f"resize expects a 2-D grid, got shape {g.shape}")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"target dims must be positive, got {out_h}x{out_w}")
    h, w = g.shape
    if (out_h, out_w) == (h, w):
        return g.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(g, yy, xx)


def _warp(grid: np.ndarray, angle_deg: float, zoom: float, shift=(0.0, 0.0), elastic=None) -> np.ndarray:
    """Inverse-map warp: rotate by angle about the center, scale by zoom,
    translate by shift (dy, dx), then add an optional elastic displacement
    field before sampling."""
    g = np.asarray(grid, dtype=np.float64)
    h, w = g.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    yr = yy - cy
    xr = xx - cx
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    # Inverse of rotate-then-zoom: un-zoom, then rotate by -theta.
    src_y = (cos_t * yr + sin_t * xr) / zoom + cy - shift[0]
    src_x = (-sin_t * yr + cos_t * xr) / zoom + cx - shift[1]
    if elastic is not None:
        src_y = src_y + elastic[0]
        src_x = src_x + elastic[1]
    return bilinear_sample(g, src_y, src_x)


# -- dataset layout ----------------------------------------------------------


@dataclass(frozen=True)
class DatasetLayout:
    """Validated view of an on-disk dataset: subject ids to sample paths."""

    root: Path
    subjects: dict[str, list[Path]]
    modality: str = "major"

    def subject_ids(self) -> list[str]:
        return sorted(self.subjects)


def ingest(root, modality: str = "major") -> DatasetLayout:
    """Scan root/<subject>/<sample> and decode-check every sample.

    Subjects are the immediate subdirectories, samples their image files in
    lexicographic order.  A subject directory without a single image is a
    DataError; a file that cannot be decoded is an IngestionError naming it.
    """
    rootp = Path(root)
    if not rootp.is_dir():
        raise DataError(f"dataset root {rootp} is not a directory")
    subjects: dict[str, list[Path]] = {}
    subdirs = sorted(p for p in rootp.iterdir() if p.is_dir())
    if not subdirs:
        raise DataError(f"dataset root {rootp} has no subject directories")
    for sub in subdirs:
        files = sorted(p for p in sub.iterdir() if p.is_file())
        paths = []
        for f in files:
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                raise IngestionError(f"{f}: not a supported image file")
            load_image(f)  # decode check; errors name the file
            paths.append(f)
        if not paths:
            raise DataError(f"subject directory {sub} contains no images")
        subjects[sub.name] = paths
    return DatasetLayout(root=rootp, subjects=subjects, modality=modality)


def load_samples(layout: DatasetLayout, height: int, width: int) -> dict[str, list[np.ndarray]]:
    """Load every sample, resized to (height, width) and scaled to [0, 1]."""
    out: dict[str, list[np.ndarray]] = {}
    for sid, paths in sorted(layout.subjects.items()):
        out[sid] = [bilinear_resize(load_image(p), height, width) for p in paths]
    return out


# -- augmentation ------------------------------------------------------------


@dataclass(frozen=True)
class AugmentationSpec:
    """Ranges for the four augmentation ops plus the stream seed.

    Each output draws, in order: zoom factor, rotation angle, brightness
    offset (all uniform in their ranges) and an elastic displacement field
    (two smoothed noise planes scaled to the given peak amplitude, in
    pixels).  Collapsing every range to the identity yields exact copies.
    """

    count: int = 45
    zoom: tuple[float, float] = (0.9, 1.1)
    rotation_deg: tuple[float, float] = (-10.0, 10.0)
    elastic_amplitude: float = 2.0
    elastic_sigma: float = 8.0
    brightness: tuple[float, float] = (-0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise DataError(f"augmentation count must be >= 1, got {self.count}")
        for name, rng in (("zoom", self.zoom), ("rotation_deg", self.rotation_deg), ("brightness", self.brightness)):
            if rng[1] < rng[0]:
                raise DataError(f"{name} range is reversed: {rng}")
        if self.zoom[0] <= 0.0:
            raise DataError(f"zoom must stay positive, got {self.zoom}")
        if self.elastic_amplitude < 0.0 or self.elastic_sigma <= 0.0:
            raise DataError("elastic amplitude must be >= 0 and sigma > 0")


def _uniform_in(u: float, rng: tuple[float, float]) -> float:
    return rng[0] + u * (rng[1] - rng[0])


def augment(image: np.ndarray, spec: AugmentationSpec) -> list[np.ndarray]:
    """Produce spec.count augmented variants of one image.

    Deterministic in (image, spec): variant i uses draws 3i..3i+2 of the
    (seed, augment) uniform stream plus its own elastic field block.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"augment expects a 2-D image, got shape {img.shape}")
    h, w = img.shape
    draws = rand.uniforms(spec.seed, rand.PURPOSE_AUGMENT, 3 * spec.count)
    out = []
    for i in range(spec.count):
        zoom = _uniform_in(draws[3 * i], spec.zoom)
        angle = _uniform_in(draws[3 * i + 1], spec.rotation_deg)
        bright = _uniform_in(draws[3 * i + 2], spec.brightness)
        elastic = None
        if spec.elastic_amplitude > 0.0:
            field = rand.uniforms(rand.derive_seed(spec.seed, "elastic", i), rand.PURPOSE_AUGMENT, 2 * h * w)
            field = (2.0 * field - 1.0).reshape(2, h, w)
            field = gaussian_filter(field, sigma=(0.0, spec.elastic_sigma, spec.elastic_sigma), mode="reflect")
            peak = np.abs(field).max()
            if peak > 0.0:
                field = field * (spec.elastic_amplitude / peak)
            elastic = (field[0], field[1])
        warped = _warp(img, angle, zoom, elastic=elastic)
        out.append(np.clip(warped + bright, 0.0, 1.0))
    return out


# -- synthetic corpus --------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the generated ridge-texture corpus.

    Every subject gets a unique (frequency, orientation) pair drawn from
    freq_band and a fixed orientation fan, plus a few dark crease curves.
    Samples perturb the base texture with pixel noise of sigma noise_level
    and geometric jitter whose amplitude scales with noise_level, so a
    noise_level of zero reproduces the base exactly.
    """

    num_subjects: int
    samples_per_subject: int
    height: int = 64
    width: int = 128
    freq_band: tuple[float, float] = (6.0, 16.0)
    noise_level: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.num_subjects < 1 or self.samples_per_subject < 1:
            raise DataError("need at least one subject and one sample")
        if self.freq_band[1] <= self.freq_band[0] or self.freq_band[0] <= 0.0:
            raise DataError(f"bad frequency band {self.freq_band}")
        if self.noise_level < 0.0:
            raise DataError(f"noise level must be >= 0, got {self.noise_level}")


MAX_CREASES = 6


def subject_base_texture(spec: SyntheticSpec, subject_index: int) -> np.ndarray:
    """Deterministic base texture for one subject: an oriented sinusoid
    crossed by dark crease curves.

    Identity is carried mostly by the crease layout (count, position, bend,
    tilt, width, depth all subject-seeded): the fixed difference banks
    respond to local contrast edges, so spatially distinct curves survive
    the feature cascade where a bare frequency/orientation change would
    wash out.  The sinusoid keeps a unique (frequency, orientation) per
    subject and fills the background.
    """
    if not 0 <= subject_index < spec.num_subjects:
        raise DataError(f"subject index {subject_index} outside corpus of {spec.num_subjects}")
    h, w = spec.height, spec.width
    n = spec.num_subjects
    freqs = np.linspace(spec.freq_band[0], spec.freq_band[1], n)
    angles = np.deg2rad(np.linspace(-40.0, 40.0, n))
    shuffle = rand.permutation(rand.derive_seed(spec.seed, "assign"), rand.PURPOSE_SYNTH, n)
    freq = freqs[subject_index]
    angle = angles[shuffle[subject_index]]
    u = rand.uniforms(
        rand.derive_seed(spec.seed, "subject", subject_index),
        rand.PURPOSE_SYNTH,
        8 + 6 * MAX_CREASES,
    )
    phase = 2.0 * np.pi * u[0]

    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    axis = (np.cos(angle) * xx + np.sin(angle) * yy) / w
    base = 0.55 + 0.22 * np.sin(2.0 * np.pi * freq * axis + phase)
    ncrease = min(MAX_CREASES, (MAX_CREASES - 2) + int(u[1] * 3.0))
    for c in range(ncrease):
        k = 2 + 6 * c
        center = (0.08 + 0.84 * u[k]) * h
        bend = (u[k + 1] - 0.5) * 0.5 * h
        tilt = (u[k + 2] - 0.5) * 0.6 * h
        sigma = 1.0 + 2.5 * u[k + 3]
        depth = 0.20 + 0.25 * u[k + 4]
        curve = center + bend * np.sin(np.pi * xx / w + 2.0 * np.pi * u[k + 5]) + tilt * (xx / w - 0.5)
        base -= depth * np.exp(-((yy - curve) ** 2) / (2.0 * sigma ** 2))
    return np.clip(base, 0.0, 1.0)


def synthesize_sample(spec: SyntheticSpec, subject_index: int, sample_index: int) -> np.ndarray:
    """One corpus sample: base texture plus seeded noise and jitter."""
    base = subject_base_texture(spec, subject_index)
    if spec.noise_level == 0.0:
        return base
    sub_seed = rand.derive_seed(spec.seed, "sample", subject_index, sample_index)
    u = rand.uniforms(sub_seed, rand.PURPOSE_SYNTH, 3)
    # Jitter scales with the noise knob: at the 0.05 default this is about
    # +/-1.5 px shift and +/-1.5 degrees rotation.
    shift_amp = 30.0 * spec.noise_level
    rot_amp = 30.0 * spec.noise_level
    shifted = _warp(
        base,
        angle_deg=(2.0 * u[0] - 1.0) * rot_amp,
        zoom=1.0,
        shift=((2.0 * u[1] - 1.0) * shift_amp, (2.0 * u[2] - 1.0) * shift_amp),
    )
    noise = rand.normals(sub_seed, rand.PURPOSE_SYNTH, base.size).reshape(base.shape)
    return np.clip(shifted + spec.noise_level * noise, 0.0, 1.0)


def generate_synthetic(spec: SyntheticSpec, out_dir, modality: str = "major") -> DatasetLayout:
    """Write the corpus under out_dir/<subject>/<sample>.pgm and return its
    layout.  Subject ids are s00, s01, ... and samples img00.pgm, ..."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    subjects: dict[str, list[Path]] = {}
    for si in range(spec.num_subjects):
        sid = f"s{si:02d}"
        sdir = out / sid
        sdir.mkdir(exist_ok=True)
        paths = []
        for qi in range(spec.samples_per_subject):
            p = sdir / f"img{qi:02d}.pgm"
            write_pgm(p, synthesize_sample(spec, si, qi))
            paths.append(p)
        subjects[sid] = paths
    return DatasetLayout(root=out, subjects=subjects, modality=modality)
