"""Crop images to bounding-box regions and encode crops for transmission.

Region annotations occasionally overflow the image border, so crops clamp to
the intersection instead of rejecting; only a fully-outside or zero-area
intersection is an error. One decoded image is shared read-only across all
per-language work for an example.
"""

from __future__ import annotations

import base64
import io
import logging
from dataclasses import dataclass
from pathlib import Path

from PIL import Image

from .corpus import BoundingBox

logger = logging.getLogger(__name__)

DEFAULT_FORMAT = "jpeg"
DEFAULT_JPEG_QUALITY = 90
DEFAULT_MAX_SIDE = 768
DEFAULT_EXTENSIONS = (".jpg", ".jpeg", ".png")


class ImagingError(Exception):
    pass


class EmptyIntersection(ImagingError):
    pass


class EncodeError(ImagingError):
    pass


class ImageNotFound(ImagingError):
    pass


@dataclass
class ImageRegion:
    image_id: str
    pixels: Image.Image
    source_bbox: BoundingBox
    clamped: bool

    @property
    def size(self) -> tuple[int, int]:
        return self.pixels.size


@dataclass(frozen=True)
class ImagePayload:
    media_type: str
    data: str
    byte_length: int

    def decode_bytes(self) -> bytes:
        return base64.b64decode(self.data)


def crop_region(image: Image.Image, bbox: BoundingBox, image_id: str = "") -> ImageRegion:
    """Crop to the intersection of bbox and the image bounds.

    Sets ``clamped`` when the requested box extended past the border. Raises
    EmptyIntersection when nothing overlaps.
    """
    img_w, img_h = image.size
    if img_w <= 0 or img_h <= 0:
        raise EmptyIntersection(f"image {image_id or '?'} has no pixels")
    x0 = bbox.x
    y0 = bbox.y
    x1 = min(bbox.x + bbox.width, img_w)
    y1 = min(bbox.y + bbox.height, img_h)
    if x0 >= img_w or y0 >= img_h or x1 <= x0 or y1 <= y0:
        raise EmptyIntersection(
            f"bbox {bbox} lies outside {img_w}x{img_h} image {image_id or '?'}"
        )
    clamped = (x1 - x0, y1 - y0) != (bbox.width, bbox.height)
    pixels = image.convert("RGB").crop((x0, y0, x1, y1))
    return ImageRegion(image_id=image_id, pixels=pixels, source_bbox=bbox, clamped=clamped)


def encode_payload(
    region: ImageRegion,
    fmt: str = DEFAULT_FORMAT,
    quality: int = DEFAULT_JPEG_QUALITY,
    max_side: int | None = DEFAULT_MAX_SIDE,
) -> ImagePayload:
    """Encode a region as base64 JPEG or PNG, downscaling to max_side first."""
    fmt = fmt.lower()
    if fmt not in ("jpeg", "png"):
        raise EncodeError(f"unsupported payload format {fmt!r}")
    pixels = region.pixels
    w, h = pixels.size
    if max_side is not None and max(w, h) > max_side:
        if w >= h:
            new_size = (max_side, max(1, round(h * max_side / w)))
        else:
            new_size = (max(1, round(w * max_side / h)), max_side)
        pixels = pixels.resize(new_size, Image.LANCZOS)
    buf = io.BytesIO()
    try:
        if fmt == "jpeg":
            pixels.save(buf, format="JPEG", quality=quality)
        else:
            pixels.save(buf, format="PNG")
    except OSError as exc:
        raise EncodeError(f"failed to encode region {region.image_id}: {exc}") from exc
    raw = buf.getvalue()
    return ImagePayload(
        media_type=f"image/{fmt}",
        data=base64.b64encode(raw).decode("ascii"),
        byte_length=len(raw),
    )


def decode_payload(payload: ImagePayload) -> Image.Image:
    return Image.open(io.BytesIO(payload.decode_bytes()))


def find_image_file(
    images_dir: str | Path,
    image_id: str,
    extensions: tuple[str, ...] = DEFAULT_EXTENSIONS,
) -> Path:
    """Locate {images_dir}/{image_id}{ext}, trying extensions in order."""
    base = Path(images_dir)
    for ext in extensions:
        candidate = base / f"{image_id}{ext}"
        if candidate.is_file():
            return candidate
    raise ImageNotFound(
        f"no image for id {image_id!r} under {base} (tried {', '.join(extensions)})"
    )


def load_image(path: str | Path) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (OSError, ValueError) as exc:
        raise ImagingError(f"cannot decode image {path}: {exc}") from exc


def dump_crop(region: ImageRegion, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{region.image_id}.png"
    region.pixels.save(path, format="PNG")
    return path
