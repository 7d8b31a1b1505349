"""A tiny procedural image world with known generative factors.

Images are 32x32 renders of one centered shape on a gray background,
controlled by four independent factors, each normalized to [0, 1]:

  hue         blends the foreground color from red to blue along a
              zero-sum channel direction (dominant factor by variance)
  size        area fraction of the shape
  shape       disc (0) or square (1)
  brightness  background gray level

The factor estimators below invert the render differentiably, which is
what makes gradient-based slider training possible against semantic
features. The color direction is zero-sum across channels and the
midpoint color is orthogonal to it, so a chroma-weighted mean color
yields an affine, monotone hue readout that is immune to the background
level mixing into soft edges.
"""

from __future__ import annotations

import torch

IMAGE_SIZE = 32
FACTOR_NAMES = ("hue", "size", "shape", "brightness")

# foreground color: c(h) = FG_BASE + h * FG_DIR, all channels stay in [0, 1]
FG_BASE = torch.tensor([0.88, 0.12, 0.18])
FG_DIR = torch.tensor([-0.70, 0.0, 0.70])

# background gray g = BG_OFFSET + BG_SPAN * b_raw with b_raw in [0.25, 0.75]
BG_OFFSET = 0.15
BG_SPAN = 0.70
BRIGHTNESS_LO, BRIGHTNESS_HI = 0.25, 0.75

# shape area fraction A = AREA_OFFSET + AREA_SPAN * s_raw with s_raw in [0.3, 0.7]
AREA_OFFSET = 0.10
AREA_SPAN = 0.18
SIZE_LO, SIZE_HI = 0.30, 0.70

EDGE_TAU = 0.75 * (2.0 / IMAGE_SIZE)  # soft edge ~0.75 px in [-1, 1] coords

# scale-free mask moment E[u^4+v^4]/E[(u^2+v^2)^2]: 3/4 for a disc, 9/14 for a square
_DISC_MOMENT = 0.75
_SQUARE_MOMENT = 9.0 / 14.0


def _grid(device=None) -> tuple[torch.Tensor, torch.Tensor]:
    half = 1.0 / IMAGE_SIZE
    coords = torch.linspace(-1 + half, 1 - half, IMAGE_SIZE, device=device)
    v, u = torch.meshgrid(coords, coords, indexing="ij")
    return u, v


def sample_factors(n: int, generator: torch.Generator | None = None) -> torch.Tensor:
    """(n, 4) iid uniform factors, each normalized to [0, 1]."""
    raw = torch.rand(n, 4, generator=generator)
    raw[:, 2] = (raw[:, 2] > 0.5).float()  # shape is categorical
    return raw


def render(factors: torch.Tensor) -> torch.Tensor:
    """Render normalized factors to (n, 3, 32, 32) float images in [0, 1]."""
    factors = torch.as_tensor(factors, dtype=torch.float32)
    if factors.ndim == 1:
        factors = factors[None]
    hue, size_n, shape_n, bright_n = factors.unbind(dim=1)
    n = factors.shape[0]
    u, v = _grid(factors.device)

    s_raw = SIZE_LO + (SIZE_HI - SIZE_LO) * size_n
    area = AREA_OFFSET + AREA_SPAN * s_raw
    r_disc = 2.0 * torch.sqrt(area / torch.pi)
    w_square = torch.sqrt(area)

    dist_disc = torch.sqrt(u**2 + v**2)[None] - r_disc[:, None, None]
    dist_square = torch.maximum(u.abs(), v.abs())[None] - w_square[:, None, None]
    mask_disc = torch.sigmoid(-dist_disc / EDGE_TAU)
    mask_square = torch.sigmoid(-dist_square / EDGE_TAU)
    mask = (1 - shape_n)[:, None, None] * mask_disc + shape_n[:, None, None] * mask_square

    color = FG_BASE.to(factors.device)[None] + hue[:, None] * FG_DIR.to(factors.device)[None]
    b_raw = BRIGHTNESS_LO + (BRIGHTNESS_HI - BRIGHTNESS_LO) * bright_n
    gray = BG_OFFSET + BG_SPAN * b_raw

    img = mask[:, None] * color[:, :, None, None] + (1 - mask[:, None]) * gray[:, None, None, None]
    return img.reshape(n, 3, IMAGE_SIZE, IMAGE_SIZE)


def estimate_factors(images: torch.Tensor) -> torch.Tensor:
    """Differentiable inverse of render: (n, 3, H, W) -> (n, 4) factor estimates.

    Works from per-pixel chroma (channel std), which is zero on gray
    background and proportional to shape-mask coverage on mixed pixels.
    Estimates stay monotone in the true factors even on noisy inputs,
    which is all the correlation metrics need.
    """
    images = torch.as_tensor(images, dtype=torch.float32)
    if images.ndim == 3:
        images = images[None]
    n = images.shape[0]
    # 3x3 box blur: averages out pixel noise while keeping every pixel an
    # exact convex mix of the foreground color and the background gray
    blurred = torch.nn.functional.avg_pool2d(images, kernel_size=3, stride=1, padding=1, count_include_pad=False)
    flat = blurred.reshape(n, 3, -1)
    u, v = _grid(images.device)
    u = u.reshape(-1)
    v = v.reshape(-1)
    eps = 1e-6

    chroma = flat.std(dim=1, unbiased=False)  # (n, P)
    # self-weighted mean approaches the max chroma = pure foreground chroma
    p8 = chroma**8
    chroma_ref = (p8 * chroma).sum(dim=1) / (p8.sum(dim=1) + eps)
    mask_soft = chroma / (chroma_ref[:, None] + eps)
    # soft threshold suppresses the residual-noise chroma floor on background
    mask = torch.sigmoid((mask_soft - 0.45) / 0.08)

    # hue: chroma^4-weighted mean color; background is annihilated by the
    # zero-sum direction, partial coverage only shrinks toward 0.5
    w_fg = mask_soft.clamp(0, 1.2) ** 4
    mean_color = (flat * w_fg[:, None]).sum(dim=2) / (w_fg.sum(dim=1)[:, None] + eps)
    fg_dir = FG_DIR.to(images.device)
    lam = (w_fg * mask_soft).sum(dim=1) / (w_fg.sum(dim=1) + eps)
    hue = 0.5 + (mean_color @ fg_dir) / (lam.clamp_min(0.05) * fg_dir.dot(fg_dir))

    # size: thresholded mask coverage -> area fraction -> normalized size
    area_frac = mask.mean(dim=1)
    s_raw = (area_frac - AREA_OFFSET) / AREA_SPAN
    size_n = (s_raw - SIZE_LO) / (SIZE_HI - SIZE_LO)

    # shape: scale-free fourth-moment anisotropy of the mask
    num = (mask * (u**4 + v**4)[None]).sum(dim=1)
    den = (mask * ((u**2 + v**2) ** 2)[None]).sum(dim=1) + eps
    moment = num / den
    shape_n = (_DISC_MOMENT - moment) / (_DISC_MOMENT - _SQUARE_MOMENT)

    # brightness: mean gray over pixels the mask calls background
    w_bg = torch.sigmoid((0.30 - mask_soft) / 0.08)
    gray = flat.mean(dim=1)
    g_est = (gray * w_bg).sum(dim=1) / (w_bg.sum(dim=1) + eps)
    b_raw = (g_est - BG_OFFSET) / BG_SPAN
    bright_n = (b_raw - BRIGHTNESS_LO) / (BRIGHTNESS_HI - BRIGHTNESS_LO)

    return torch.stack([hue, size_n, shape_n, bright_n], dim=1)


_SIZE_WORDS = ((1 / 3, "small"), (2 / 3, "medium"), (float("inf"), "large"))
_COLOR_WORDS = ((1 / 3, "red"), (2 / 3, "purple"), (float("inf"), "blue"))

WORD_TARGETS = {
    "red": ("hue", 0.0),
    "purple": ("hue", 0.5),
    "blue": ("hue", 1.0),
    "small": ("size", 1 / 6),
    "medium": ("size", 0.5),
    "large": ("size", 5 / 6),
    "disc": ("shape", 0.0),
    "square": ("shape", 1.0),
    "dark": ("brightness", 0.2),
    "bright": ("brightness", 0.8),
}


def _band(value: float, bands) -> str:
    for hi, word in bands:
        if value < hi:
            return word
    return bands[-1][1]


def caption_for(factors: torch.Tensor, plain: bool = False) -> str:
    """Caption one factor row; plain=True gives the generic fallback text."""
    if plain:
        return "a shape"
    hue, size_n, shape_n, bright_n = (float(x) for x in factors)
    size_w = _band(size_n, _SIZE_WORDS)
    color_w = _band(hue, _COLOR_WORDS)
    shape_w = "square" if shape_n > 0.5 else "disc"
    text = f"a {size_w} {color_w} {shape_w}"
    if bright_n < 0.4:
        text += " on a dark background"
    elif bright_n > 0.6:
        text += " on a bright background"
    return text


def make_dataset(
    n: int, seed: int = 0, plain_fraction: float = 0.5
) -> tuple[torch.Tensor, torch.Tensor, list[str]]:
    """Sampled factors, rendered images, and captions for denoiser training."""
    gen = torch.Generator().manual_seed(seed)
    factors = sample_factors(n, gen)
    images = render(factors)
    coin = torch.rand(n, generator=gen)
    captions = [caption_for(factors[i], plain=bool(coin[i] < plain_fraction)) for i in range(n)]
    return factors, images, captions
