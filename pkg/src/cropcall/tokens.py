"""Visual-token accounting on a patch grid, and the retain-token ratio (RTR)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .geometry import CROP_RECTS, InvalidInputError

MAX_SIDE = 2000


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise InvalidInputError(f"image dims must be positive, got {self.width}x{self.height}")

    def capped(self, cap: int = MAX_SIDE) -> "ImageDims":
        """Clamp each side to ``cap`` pixels (training images are capped at 2000x2000)."""
        return ImageDims(min(self.width, cap), min(self.height, cap))


@dataclass(frozen=True)
class TokenModel:
    token_stride: int = 28  # patch 14 x spatial merge 2
    min_tokens: int | None = None
    max_tokens: int | None = None

    def __post_init__(self):
        if self.token_stride < 1:
            raise InvalidInputError("token_stride must be >= 1")


@dataclass(frozen=True)
class TokenAccount:
    t_sample: int
    t_full: int

    @property
    def rtr(self) -> float:
        return self.t_sample / self.t_full


def visual_tokens(dims: ImageDims, tm: TokenModel | None = None) -> int:
    tm = tm or TokenModel()
    s = tm.token_stride
    n = math.ceil(dims.width / s) * math.ceil(dims.height / s)
    if tm.min_tokens is not None:
        n = max(n, tm.min_tokens)
    if tm.max_tokens is not None:
        n = min(n, tm.max_tokens)
    return n


def low_res_dims(dims: ImageDims) -> ImageDims:
    return ImageDims(-(-dims.width // 2), -(-dims.height // 2))


def crop_dims(full: ImageDims, crop_id: str) -> ImageDims:
    """Pixel size of a crop rendered at the native (full-resolution) density."""
    r = CROP_RECTS[str(crop_id)]
    return ImageDims(max(1, math.ceil((r.x2 - r.x1) * full.width)),
                     max(1, math.ceil((r.y2 - r.y1) * full.height)))


def rtr_sample(turn_dims: Sequence[ImageDims], full: ImageDims,
               tm: TokenModel | None = None) -> TokenAccount:
    if not turn_dims:
        raise InvalidInputError("rtr_sample needs at least one processed image")
    t = sum(visual_tokens(d, tm) for d in turn_dims)
    return TokenAccount(t_sample=t, t_full=visual_tokens(full, tm))


def trajectory_account(full: ImageDims, crops: Iterable[str] = (),
                       tm: TokenModel | None = None) -> TokenAccount:
    """Tokens of the low-res view plus every requested crop (no union discount)."""
    images = [low_res_dims(full)] + [crop_dims(full, c) for c in crops]
    return rtr_sample(images, full, tm)


def rtr_aggregate(accounts: Iterable[TokenAccount | float]) -> float:
    vals = [a.rtr if isinstance(a, TokenAccount) else float(a) for a in accounts]
    if not vals:
        raise InvalidInputError("rtr_aggregate over an empty list")
    return sum(vals) / len(vals)
