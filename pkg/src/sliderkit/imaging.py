"""Image tensor <-> PNG bytes, plus grid sheets.

Encoding is deterministic: same pixels give the same bytes, which lets
callers compare CLI output and service responses byte for byte. PNG
ancillary chunks that would break that (timestamps, text) are never
written.
"""

from __future__ import annotations

import io

import numpy as np
import torch
from PIL import Image

from .errors import ContractViolation


def tensor_to_array(image: torch.Tensor) -> np.ndarray:
    """(3, H, W) float in [0, 1] -> (H, W, 3) uint8."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractViolation(f"expected (3, H, W) image tensor, got {tuple(image.shape)}")
    arr = image.detach().cpu().clamp(0.0, 1.0).numpy()
    return (arr * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)


def array_to_tensor(arr: np.ndarray) -> torch.Tensor:
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractViolation(f"expected (H, W, 3) array, got {arr.shape}")
    return torch.from_numpy(arr.astype(np.float32).transpose(2, 0, 1) / 255.0)


def image_to_png(image: torch.Tensor) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(tensor_to_array(image), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_to_image(data: bytes) -> torch.Tensor:
    with Image.open(io.BytesIO(data)) as img:
        return array_to_tensor(np.asarray(img.convert("RGB")))


def grid_sheet(images: list[list[torch.Tensor]], pad: int = 2, pad_value: float = 1.0) -> torch.Tensor:
    """Montage a row-major nested list of equally sized images into one tensor."""
    if not images or not images[0]:
        raise ContractViolation("grid needs at least one image")
    width = len(images[0])
    if any(len(row) != width for row in images):
        raise ContractViolation("grid rows must have equal length")
    c, h, w = images[0][0].shape
    rows, cols = len(images), width
    sheet = torch.full(
        (c, rows * h + pad * (rows + 1), cols * w + pad * (cols + 1)), pad_value)
    for i, row in enumerate(images):
        for j, img in enumerate(row):
            if tuple(img.shape) != (c, h, w):
                raise ContractViolation("grid images must share one shape")
            top = pad + i * (h + pad)
            left = pad + j * (w + pad)
            sheet[:, top : top + h, left : left + w] = img
    return sheet
