"""Image I/O and value-range conversion helpers.

Images are float32 H x W x 3 arrays in [-1, 1] everywhere inside the
package; PNG/JPEG and uint8 conversions happen only at the boundary.
"""

import base64
import io

import numpy as np
from PIL import Image


def to_unit(img):
    """uint8 [0, 255] -> float32 [-1, 1]."""
    return (img.astype(np.float32) / 127.5) - 1.0


def to_uint8(img):
    """float [-1, 1] -> uint8 [0, 255], clipping out-of-range values."""
    arr = np.clip((np.asarray(img, dtype=np.float32) + 1.0) * 127.5, 0.0, 255.0)
    return np.round(arr).astype(np.uint8)


def load_image(path):
    """Load an RGB image file as float32 H x W x 3 in [-1, 1]."""
    with Image.open(path) as im:
        return to_unit(np.asarray(im.convert("RGB")))


def save_image(img, path):
    Image.fromarray(to_uint8(img)).save(path)


def encode_png(img):
    """float image -> PNG bytes."""
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img)).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data):
    """PNG/JPEG bytes -> float image."""
    with Image.open(io.BytesIO(data)) as im:
        return to_unit(np.asarray(im.convert("RGB")))


def png_to_b64(img):
    return base64.b64encode(encode_png(img)).decode("ascii")


def b64_to_image(payload):
    return decode_png(base64.b64decode(payload))


def decode_mask_png(data):
    """PNG bytes -> boolean H x W mask (nonzero luminance = True)."""
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("L")) > 127
