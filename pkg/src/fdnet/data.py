"""Synthetic camouflage data, dataset index files and PNG I/O."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .numcore import Tensor, ops

INDEX_NAME = "index.json"
MASK_BAND = (0.05, 0.5)


@dataclass
class Entry:
    image: str
    mask: str
    split: str = "train"


@dataclass
class DatasetIndex:
    root: str
    entries: list[Entry] = field(default_factory=list)
    seed: int = 0

    @property
    def path(self) -> Path:
        return Path(self.root) / INDEX_NAME

    def subset(self, split: str) -> list[Entry]:
        return [e for e in self.entries if e.split == split]

    def save(self) -> Path:
        payload = {"seed": self.seed, "entries": [asdict(e) for e in self.entries]}
        self.path.write_text(json.dumps(payload, indent=2) + "\n")
        return self.path

    @classmethod
    def load(cls, root: str | Path) -> "DatasetIndex":
        root = Path(root)
        if root.is_file():
            root = root.parent
        payload = json.loads((root / INDEX_NAME).read_text())
        return cls(str(root), [Entry(**e) for e in payload["entries"]], int(payload.get("seed", 0)))

    def validate(self) -> None:
        for e in self.entries:
            for rel in (e.image, e.mask):
                if not (Path(self.root) / rel).is_file():
                    raise FileNotFoundError(f"missing dataset file {rel}")
            if e.split not in ("train", "test"):
                raise ValueError(f"unknown split {e.split!r} for {e.image}")

    def load_arrays(self, split: str | None = "train") -> tuple[list[str], np.ndarray, np.ndarray]:
        entries = self.entries if split is None else self.subset(split)
        if not entries:
            raise ValueError(f"no entries in split {split!r}")
        root = Path(self.root)
        ids = [Path(e.image).stem for e in entries]
        images = np.stack([read_image(root / e.image) for e in entries])
        masks = np.stack([read_mask(root / e.mask) for e in entries])
        return ids, images, masks


# ---------------------------------------------------------------- PNG I/O


def read_image(path: str | Path) -> np.ndarray:
    """RGB PNG as H×W×3 float64 in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def read_mask(path: str | Path) -> np.ndarray:
    """Grayscale PNG as a binary H×W map (pixels above 127 are foreground)."""
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) > 127).astype(np.float64)


def read_gray(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def write_png(path: str | Path, values: np.ndarray) -> None:
    """Write a [0, 1] array (H×W or H×W×3) as an 8-bit PNG without metadata."""
    arr = to_uint8(values)
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


# ---------------------------------------------------------------- synthesis


def value_noise(rng: np.random.Generator, size: int, octaves: int = 4, base: int = 4,
                persistence: float = 0.5) -> np.ndarray:
    """Multi-octave value noise in [0, 1], bilinearly interpolated lattices."""
    out = np.zeros((size, size))
    amp, total = 1.0, 0.0
    for o in range(octaves):
        cells = min(base * 2**o, size)
        lattice = rng.random((1, 1, cells, cells))
        out += amp * ops.resize(Tensor(lattice), (size, size)).data[0, 0]
        total += amp
        amp *= persistence
    out /= total
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo + 1e-12)


def _palette_texture(rng: np.random.Generator, size: int, palette: np.ndarray) -> np.ndarray:
    """Map noise through a 2-colour palette and add a finer luminance octave."""
    t = value_noise(rng, size)[..., None]
    detail = value_noise(rng, size, octaves=2, base=16)[..., None]
    img = (1.0 - t) * palette[0] + t * palette[1]
    return np.clip(img + 0.15 * (detail - 0.5), 0.0, 1.0)


def blob_mask(rng: np.random.Generator, size: int, band: tuple[float, float] = MASK_BAND,
              max_tries: int = 100) -> np.ndarray:
    """Star-convex blob with a few random harmonics; foreground fraction inside ``band``."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    for _ in range(max_tries):
        frac = rng.uniform(band[0] + 0.03, band[1] - 0.1)
        r0 = np.sqrt(frac * size * size / np.pi)
        cy, cx = rng.uniform(r0 * 0.8, size - r0 * 0.8, size=2)
        n_harm = 3
        amps = rng.uniform(0.0, 0.25, size=n_harm) / np.arange(1, n_harm + 1)
        phases = rng.uniform(0, 2 * np.pi, size=n_harm)
        theta = np.arctan2(yy - cy, xx - cx)
        radius = r0 * (1.0 + sum(a * np.cos((k + 2) * theta + p) for k, (a, p) in enumerate(zip(amps, phases))))
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2).astype(np.float64)
        if band[0] <= mask.mean() <= band[1]:
            return mask
    raise RuntimeError("could not draw a blob inside the mask band")


def synth_sample(rng: np.random.Generator, size: int, contrast: float) -> tuple[np.ndarray, np.ndarray]:
    """One camouflaged image and its mask.

    Background and foreground share a palette; the foreground texture is an
    independent draw whose palette is pushed towards the complementary colour
    by ``contrast`` (0 = statistically matched, 1 = fully separated).
    """
    palette = rng.uniform(0.2, 0.8, size=(2, 3))
    bg = _palette_texture(rng, size, palette)
    fg_palette = (1.0 - contrast) * palette + contrast * (1.0 - palette[::-1])
    fg = _palette_texture(rng, size, fg_palette)
    mask = blob_mask(rng, size)
    image = np.where(mask[..., None] > 0, fg, bg)
    return image, mask


def synth_generate(n: int, size: int = 64, seed: int = 0, out: str | Path = "data",
                   contrast: float = 0.5) -> DatasetIndex:
    """Write ``n`` synthetic samples under ``out`` and return their index."""
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if size <= 0:
        raise ValueError(f"size must be positive, got {size}")
    if not 0.0 <= contrast <= 1.0:
        raise ValueError(f"contrast must lie in [0, 1], got {contrast}")
    root = Path(out)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    streams = np.random.SeedSequence(seed).spawn(n)
    entries = []
    for i, ss in enumerate(streams):
        image, mask = synth_sample(np.random.default_rng(ss), size, contrast)
        name = f"{i:04d}.png"
        write_png(root / "images" / name, image)
        write_png(root / "masks" / name, mask)
        entries.append(Entry(f"images/{name}", f"masks/{name}", "train"))
    index = DatasetIndex(str(root), entries, seed)
    index.save()
    return index


def split_dataset(index: DatasetIndex, ratio: float = 0.8, seed: int = 0) -> DatasetIndex:
    """Deterministic shuffled train/test assignment; ``round(ratio * n)`` items train."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    n = len(index.entries)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratio * n))
    train = set(order[:n_train].tolist())
    entries = [Entry(e.image, e.mask, "train" if i in train else "test") for i, e in enumerate(index.entries)]
    return DatasetIndex(index.root, entries, seed)
