"""Schematic grayscale frames and image degradation."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lcrowd.errors import ConfigError
from lcrowd.labeling import HEAD_HEIGHT, CameraModel, Projection, project_points

TILE = 16
MIN_DISC_PX = 1.0


class BackgroundStyle(str, enum.Enum):
    FLAT = "flat"
    GRID = "grid"
    CHECKER = "checker"


@dataclass(frozen=True)
class RenderSettings:
    background: BackgroundStyle = BackgroundStyle.FLAT
    base_luminance: float = 0.5
    agent_shade: float = 0.1
    noise_std: float = 0.0
    resolution: tuple[int, int] = (320, 240)  # width, height

    def __post_init__(self):
        object.__setattr__(self, "background", BackgroundStyle(self.background))
        if not 0.0 <= self.base_luminance <= 1.0 or not 0.0 <= self.agent_shade <= 1.0:
            raise ConfigError("luminance and shade must lie in [0, 1]")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")


@dataclass
class Frame:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint8, row-major

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8).reshape(self.height, self.width)

    def __eq__(self, other):
        return (isinstance(other, Frame) and self.width == other.width
                and self.height == other.height and np.array_equal(self.pixels, other.pixels))


def background(settings: RenderSettings) -> np.ndarray:
    """Background luminance in [0, 1] before quantization."""
    w, h = settings.resolution
    base = settings.base_luminance
    img = np.full((h, w), base)
    if settings.background is BackgroundStyle.GRID:
        rows = np.arange(h) % TILE == 0
        cols = np.arange(w) % TILE == 0
        img[rows, :] = 0.6 * base
        img[:, cols] = 0.6 * base
    elif settings.background is BackgroundStyle.CHECKER:
        yy, xx = np.indices((h, w))
        dark = ((yy // TILE) + (xx // TILE)) % 2 == 1
        img[dark] = 0.7 * base
    return img


def disc_radius_px(radius: float, depth: float, cam: CameraModel) -> float:
    if cam.projection is Projection.PERSPECTIVE:
        r = cam.focal_px * radius / depth
    else:
        r = cam.ortho_scale * radius
    return max(r, MIN_DISC_PX)


def rasterize(agents, cam: CameraModel, settings: RenderSettings) -> Frame:
    """Draw agents as filled discs at their head points over the background.

    ``agents`` holds ``(agent_id, x, y, radius)`` tuples. Discs are painted
    far to near; agents behind the camera are skipped.
    """
    w, h = settings.resolution
    if (w, h) != (cam.image_width, cam.image_height):
        raise ConfigError("render resolution must match the camera image size")
    img = background(settings)
    rows = sorted((int(a[0]), float(a[1]), float(a[2]), float(a[3])) for a in agents)
    if rows:
        arr = np.array([r[1:] for r in rows])
        head = np.column_stack([arr[:, :2], np.full(len(arr), HEAD_HEIGHT)])
        u, v, d = project_points(head, cam)
        order = sorted(range(len(rows)), key=lambda i: (-d[i], rows[i][0]))
        for i in order:
            if not np.isfinite(u[i]):
                continue
            rad = disc_radius_px(arr[i, 2], d[i], cam)
            c0 = max(int(np.floor(u[i] - rad)), 0)
            c1 = min(int(np.ceil(u[i] + rad)) + 1, w)
            r0 = max(int(np.floor(v[i] - rad)), 0)
            r1 = min(int(np.ceil(v[i] + rad)) + 1, h)
            if c0 >= c1 or r0 >= r1:
                continue
            yy, xx = np.mgrid[r0:r1, c0:c1]
            # pixel centers sit at half-integer coordinates
            mask = (xx + 0.5 - u[i]) ** 2 + (yy + 0.5 - v[i]) ** 2 <= rad * rad
            img[r0:r1, c0:c1][mask] = settings.agent_shade
    pixels = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return Frame(w, h, pixels)


def add_gaussian_noise(frame: Frame, std: float, rng: np.random.Generator) -> Frame:
    """Independent N(0, std) perturbation per pixel, rounded half-to-even and
    clamped to [0, 255]."""
    if std < 0:
        raise ValueError("std must be >= 0")
    if std == 0:
        return Frame(frame.width, frame.height, frame.pixels.copy())
    noisy = frame.pixels.astype(float) + rng.normal(0.0, std, size=frame.pixels.shape)
    return Frame(frame.width, frame.height, np.clip(np.rint(noisy), 0, 255).astype(np.uint8))


def write_pgm(frame: Frame, path) -> None:
    """Binary portable graymap (P5), maxval 255."""
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + frame.pixels.tobytes())


def read_pgm(path) -> Frame:
    data = Path(path).read_bytes()
    tokens = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if i == j:
            raise ConfigError(f"{path}: truncated graymap header")
        tokens.append(data[i:j])
        i = j
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ConfigError(f"{path}: not an 8-bit P5 graymap")
    w, h = int(tokens[1]), int(tokens[2])
    body = data[i + 1 : i + 1 + w * h]  # exactly one whitespace byte after maxval
    if len(body) != w * h:
        raise ConfigError(f"{path}: truncated pixel data")
    return Frame(w, h, np.frombuffer(body, dtype=np.uint8))
