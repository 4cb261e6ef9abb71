"""Minimal 8-bit PNG writer/reader (grayscale, RGB, palette) on zlib + struct.

Writes are deterministic: fixed compression level, filter type 0, no
timestamps or text chunks, so identical arrays give identical bytes.
"""
import struct
import zlib

import numpy as np

SIGNATURE = b"\x89PNG\r\n\x1a\n"
_COLOR_CHANNELS = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}


class PNGError(ValueError):
    pass


def _chunk(tag, data):
    return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)


def quantize(image):
    """Float image in [0, 1] to uint8, round-half-to-even."""
    return np.clip(np.rint(np.asarray(image, dtype=float) * 255.0), 0, 255).astype(np.uint8)


def encode(pixels, palette=None):
    """Encode a uint8 ``H x W`` / ``H x W x 1`` / ``H x W x 3`` array as PNG bytes.

    With ``palette`` (a sequence of RGB triples) the 2-D array is written as
    colour type 3 (indexed).
    """
    a = np.asarray(pixels)
    if a.dtype != np.uint8:
        raise PNGError(f"expected uint8 pixels, got {a.dtype}")
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if palette is not None:
        if a.ndim != 2:
            raise PNGError("palette images must be 2-D")
        color_type = 3
    elif a.ndim == 2:
        color_type = 0
    elif a.ndim == 3 and a.shape[2] == 3:
        color_type = 2
    else:
        raise PNGError(f"unsupported pixel array shape {a.shape}")
    h, w = a.shape[:2]
    rows = a.reshape(h, -1)
    raw = np.concatenate([np.zeros((h, 1), np.uint8), rows], axis=1).tobytes()
    out = [SIGNATURE, _chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0))]
    if palette is not None:
        pal = np.asarray(palette, dtype=np.uint8).reshape(-1, 3)
        out.append(_chunk(b"PLTE", pal.tobytes()))
    out.append(_chunk(b"IDAT", zlib.compress(raw, 9)))
    out.append(_chunk(b"IEND", b""))
    return b"".join(out)


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(data, h, stride, bpp):
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int64)
    pos = 0
    for y in range(h):
        ftype = data[pos]
        line = np.frombuffer(data, np.uint8, stride, pos + 1).astype(np.int64)
        pos += stride + 1
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            cur = line.copy()
            for i in range(stride):
                left = cur[i - bpp] if i >= bpp else 0
                if ftype == 1:
                    cur[i] = (cur[i] + left) & 0xFF
                elif ftype == 3:
                    cur[i] = (cur[i] + ((left + prev[i]) >> 1)) & 0xFF
                else:
                    ul = prev[i - bpp] if i >= bpp else 0
                    cur[i] = (cur[i] + _paeth(left, prev[i], ul)) & 0xFF
        else:
            raise PNGError(f"bad filter type {ftype} on row {y}")
        out[y] = cur
        prev = cur
    return out


def decode(blob):
    """Decode PNG bytes into ``(pixels, palette)``.

    Only 8-bit, non-interlaced images are supported. ``pixels`` is ``H x W``
    for grayscale/indexed and ``H x W x C`` otherwise; ``palette`` is an
    ``N x 3`` uint8 array or None.
    """
    if blob[:8] != SIGNATURE:
        raise PNGError("not a PNG file")
    pos, idat, palette, header = 8, [], None, None
    while pos < len(blob):
        (length,) = struct.unpack(">I", blob[pos:pos + 4])
        tag = blob[pos + 4:pos + 8]
        data = blob[pos + 8:pos + 8 + length]
        (crc,) = struct.unpack(">I", blob[pos + 8 + length:pos + 12 + length])
        if zlib.crc32(tag + data) & 0xFFFFFFFF != crc:
            raise PNGError(f"CRC mismatch in {tag!r} chunk")
        pos += 12 + length
        if tag == b"IHDR":
            header = struct.unpack(">IIBBBBB", data)
        elif tag == b"PLTE":
            palette = np.frombuffer(data, np.uint8).reshape(-1, 3).copy()
        elif tag == b"IDAT":
            idat.append(data)
        elif tag == b"IEND":
            break
    if header is None:
        raise PNGError("missing IHDR")
    w, h, depth, color_type, _, _, interlace = header
    if depth != 8 or interlace != 0 or color_type not in _COLOR_CHANNELS:
        raise PNGError(f"unsupported PNG (depth={depth}, colour type={color_type}, interlace={interlace})")
    ch = _COLOR_CHANNELS[color_type]
    pixels = _unfilter(zlib.decompress(b"".join(idat)), h, w * ch, ch)
    pixels = pixels.reshape(h, w, ch)
    if ch == 1:
        pixels = pixels[:, :, 0]
    return pixels, palette


def write_png(path, pixels, palette=None):
    with open(path, "wb") as fh:
        fh.write(encode(pixels, palette))


def read_png(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def read_image(path):
    """Read a PNG as a float ``H x W x C`` image in [0, 1] (alpha dropped, palette expanded)."""
    pixels, palette = read_png(path)
    if palette is not None:
        pixels = palette[pixels]
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if pixels.shape[2] in (2, 4):
        pixels = pixels[:, :, :-1]
    return pixels.astype(float) / 255.0


def write_image(path, image):
    write_png(path, quantize(image))
