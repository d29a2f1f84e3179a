"""Synthetic portrait-like clips.

A textured, deforming ellipse moves over a textured background seen by a jittering
camera. A static distractor ellipse in the background shares most of the foreground
texture, so colour alone cannot separate the two; background-only samples are taken
with independent camera offsets and never contain the foreground.
"""

import math
from typing import NamedTuple

import cv2
import numpy as np

from bgcut.config import SyntheticSceneSpec
from bgcut.utils.images import Frame, Mask

SUPERSAMPLING = 4
PIXEL_NOISE = 2.0


class Ellipse(NamedTuple):
    cx: float
    cy: float
    a: float
    b: float
    theta: float

    @property
    def area(self) -> float:
        return math.pi * self.a * self.b


def _smooth_noise(rng: np.random.Generator, h: int, w: int, cells: int) -> np.ndarray:
    """Band-limited noise in [0, 1]: a coarse random grid upsampled bicubically."""
    coarse = rng.random((cells, cells, 3)).astype(np.float32)
    fine = cv2.resize(coarse, (w, h), interpolation=cv2.INTER_CUBIC)
    lo, hi = fine.min(), fine.max()
    return (fine - lo) / max(hi - lo, 1e-6)


def _palette(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    return rng.uniform(20, 235, 3), rng.uniform(20, 235, 3)


def background_texture(
    family: str, rng: np.random.Generator, h: int, w: int
) -> np.ndarray:
    """H×W×3 float texture in [0, 255] of the requested family."""
    c0, c1 = _palette(rng)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)

    if family == "stripes":
        angle = rng.uniform(0, math.pi)
        period = rng.uniform(8, 24)
        phase = np.cos(angle) * xx + np.sin(angle) * yy
        t = 0.5 + 0.5 * np.sin(2 * math.pi * phase / period)
    elif family == "checker":
        cell = int(rng.integers(6, 16))
        t = ((xx // cell + yy // cell) % 2).astype(np.float32)
    elif family == "blobs":
        t = np.zeros((h, w), dtype=np.float32)
        for _ in range(int(rng.integers(6, 12))):
            cx, cy = rng.uniform(0, w), rng.uniform(0, h)
            s = rng.uniform(4, 16)
            t += np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s * s))
        t = np.clip(t, 0, 1)
    else:
        t = _smooth_noise(rng, h, w, cells=max(4, min(h, w) // 12)).mean(axis=2)

    t = t[..., None]
    detail = _smooth_noise(rng, h, w, cells=max(8, min(h, w) // 4)) - 0.5
    return np.clip(c0 * (1 - t) + c1 * t + 30.0 * detail, 0, 255)


def _coverage(ellipse: Ellipse, h: int, w: int) -> np.ndarray:
    """Fraction of each pixel inside the ellipse, by regular supersampling."""
    s = SUPERSAMPLING
    offsets = (np.arange(s) + 0.5) / s
    ys = (np.arange(h)[:, None] + offsets[None, :]).reshape(-1)
    xs = (np.arange(w)[:, None] + offsets[None, :]).reshape(-1)
    dx = xs[None, :] - ellipse.cx
    dy = ys[:, None] - ellipse.cy
    cos, sin = math.cos(ellipse.theta), math.sin(ellipse.theta)
    u = (dx * cos + dy * sin) / ellipse.a
    v = (-dx * sin + dy * cos) / ellipse.b
    inside = (u * u + v * v <= 1.0).astype(np.float32)
    return inside.reshape(h, s, w, s).mean(axis=(1, 3))


class SceneRenderer:
    """Deterministic renderer for one :class:`SyntheticSceneSpec`."""

    def __init__(self, spec: SyntheticSceneSpec) -> None:
        self.spec = spec
        rng = np.random.default_rng([spec.seed, 0])
        h, w = spec.height, spec.width
        margin = int(math.ceil(spec.camera_jitter)) + 1
        self.margin = margin
        canvas_h, canvas_w = h + 2 * margin, w + 2 * margin

        self.background = background_texture(spec.background_family, rng, canvas_h, canvas_w)
        self.fg_texture = background_texture("noise", rng, canvas_h, canvas_w)
        unrelated = background_texture("blobs", rng, canvas_h, canvas_w)
        share = spec.texture_share
        self.distractor_texture = share * self.fg_texture + (1 - share) * unrelated

        size = min(h, w)
        r_lo, r_hi = spec.fg_radius
        self.radius = rng.uniform(r_lo, r_hi) * size
        self.aspect = rng.uniform(1.1, 1.5)
        self.phase = rng.uniform(0, 2 * math.pi, size=3)
        self.period = rng.uniform(0.6, 1.4) * max(spec.frames, 4)

        self.distractor = None
        if spec.with_distractor:
            # corner band, away from the foreground path
            corner = rng.integers(0, 4)
            cx = canvas_w * (0.18 if corner % 2 == 0 else 0.82)
            cy = canvas_h * (0.18 if corner < 2 else 0.82)
            r = 0.12 * size
            self.distractor = Ellipse(cx, cy, r * 1.3, r, rng.uniform(0, math.pi))
            alpha = _coverage(self.distractor, canvas_h, canvas_w)[..., None]
            self.background = alpha * self.distractor_texture + (1 - alpha) * self.background

    def foreground_ellipse(self, t: int) -> Ellipse:
        """Foreground geometry in frame coordinates at frame ``t``."""
        spec = self.spec
        h, w = spec.height, spec.width
        omega = 2 * math.pi * t / self.period
        amp = spec.motion_amplitude * min(h, w)
        pulse = spec.deformation * math.sin(omega * 1.7 + self.phase[2])
        a = self.radius * math.sqrt(self.aspect) * (1 + pulse)
        b = self.radius / math.sqrt(self.aspect) * (1 - pulse)
        reach = max(a, b) + 1
        cx = w / 2 + amp * math.sin(omega + self.phase[0])
        cy = h / 2 + 0.5 * amp * math.sin(omega * 0.8 + self.phase[1])
        cx = min(max(cx, reach), w - reach)
        cy = min(max(cy, reach), h - reach)
        theta = 0.25 * math.sin(omega * 0.6 + self.phase[2])
        return Ellipse(cx, cy, a, b, theta)

    def _camera(self, rng: np.random.Generator) -> tuple[int, int]:
        j = self.spec.camera_jitter
        dy, dx = np.round(rng.uniform(-j, j, size=2)).astype(int)
        return self.margin + int(dy), self.margin + int(dx)

    def _view(self, canvas: np.ndarray, top: int, left: int) -> np.ndarray:
        h, w = self.spec.height, self.spec.width
        return canvas[top : top + h, left : left + w]

    def _finish(self, image: np.ndarray, rng: np.random.Generator) -> Frame:
        noisy = image + rng.normal(0.0, PIXEL_NOISE, image.shape)
        return np.clip(np.round(noisy), 0, 255).astype(np.uint8)

    def frame(self, t: int) -> tuple[Frame, Mask]:
        """Rendered frame ``t`` and its exact mask (coverage > 0.5)."""
        rng = np.random.default_rng([self.spec.seed, 1, t])
        top, left = self._camera(rng)
        background = self._view(self.background, top, left)

        ellipse = self.foreground_ellipse(t)
        h, w = self.spec.height, self.spec.width
        alpha = _coverage(ellipse, h, w)
        shift = int(round(ellipse.cx - w / 2)), int(round(ellipse.cy - h / 2))
        texture = self._view(
            self.fg_texture,
            self.margin - min(max(shift[1], -self.margin), self.margin),
            self.margin - min(max(shift[0], -self.margin), self.margin),
        )
        image = alpha[..., None] * texture + (1 - alpha[..., None]) * background
        return self._finish(image, rng), alpha > 0.5

    def background_sample(self, k: int) -> Frame:
        """Background-only view with its own camera offset and exposure."""
        rng = np.random.default_rng([self.spec.seed, 2, k])
        top, left = self._camera(rng)
        gain = rng.uniform(0.95, 1.05)
        return self._finish(self._view(self.background, top, left) * gain, rng)
