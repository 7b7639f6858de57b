"""Binary file formats: URFC RF-channel cubes and PGM image reading.

URFC layout (little endian): magic "URFC", version u32, L u32, N u32,
E u32, sampling_freq f64, center_freq f64, sound_speed f64, pitch f64,
payload float32 in [line][sample][element] order, CRC32 of all preceding
bytes. Writing and re-reading a cube is bit-exact.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .beamform import RfCube
from .errors import CorruptFileError, InvalidInputError
from .geometry import ArrayGeometry

_CUBE_MAGIC = b"URFC"
_CUBE_VERSION = 1
_HEADER = struct.Struct("<4sIIIIdddd")


def write_cube(cube: RfCube, path: str) -> int:
    """Write an RF cube; returns the CRC32 recorded in the trailer."""
    cube.validate()
    geom = cube.geom
    lines, samples, elements = cube.data.shape
    header = _HEADER.pack(_CUBE_MAGIC, _CUBE_VERSION, lines, samples,
                          elements, geom.sampling_freq, geom.center_freq,
                          geom.sound_speed, geom.pitch)
    payload = np.ascontiguousarray(cube.data, dtype="<f4").tobytes()
    body = header + payload
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", crc))
    return crc


def read_cube(path: str, aperture_size: int | None = None,
              focal_depth: float | None = None) -> RfCube:
    """Read a URFC file back into an RfCube.

    The file stores only the acquisition header (dims, frequencies, sound
    speed, pitch); the receive aperture size is a processing choice, so it
    is supplied here (default: the full array) along with an optional focal
    depth for consumers that re-simulate.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size + 4:
        raise CorruptFileError("cube file is truncated")
    body, crc_bytes = blob[:-4], blob[-4:]
    if struct.unpack("<I", crc_bytes)[0] != (zlib.crc32(body) & 0xFFFFFFFF):
        raise CorruptFileError("cube file checksum mismatch")
    (magic, version, lines, samples, elements, sampling_freq, center_freq,
     sound_speed, pitch) = _HEADER.unpack(body[:_HEADER.size])
    if magic != _CUBE_MAGIC:
        raise CorruptFileError("bad magic; not an RF cube file")
    if version != _CUBE_VERSION:
        raise CorruptFileError(f"unsupported cube format version {version}")
    payload = body[_HEADER.size:]
    expected = 4 * lines * samples * elements
    if len(payload) != expected:
        raise CorruptFileError(
            f"payload is {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    data = data.reshape(lines, samples, elements)
    if aperture_size is None:
        aperture_size = elements
    if not 1 <= aperture_size <= elements:
        raise InvalidInputError(
            f"aperture_size must be in [1, {elements}], got {aperture_size}")
    geom = ArrayGeometry(
        element_count=elements, pitch=pitch, sound_speed=sound_speed,
        sampling_freq=sampling_freq, center_freq=center_freq,
        aperture_size=aperture_size, scan_lines=lines, depth_samples=samples,
        focal_depth=focal_depth if focal_depth is not None
        else samples * sound_speed / (4.0 * sampling_freq))
    return RfCube(data=data, geom=geom).validate()


def read_pgm(path: str) -> np.ndarray:
    """Read a binary (P5) PGM file into a uint8 [height][width] array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    # Header: "P5", whitespace-separated width, height, maxval, then one
    # whitespace byte before the raster.
    if not blob.startswith(b"P5"):
        raise CorruptFileError("bad magic; not a binary PGM file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":  # comment line
            end = blob.find(b"\n", pos)
            if end == -1:
                raise CorruptFileError("unterminated comment in PGM header")
            pos = end + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise CorruptFileError(f"malformed PGM header token {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise CorruptFileError(f"unsupported PGM maxval {maxval}")
    raster = blob[pos:]
    if len(raster) != width * height:
        raise CorruptFileError(
            f"raster is {len(raster)} bytes, expected {width * height}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def pgm_to_db(levels: np.ndarray, dynamic_range: float = 60.0) -> np.ndarray:
    """Map 0..255 gray levels back to the displayed [-dr, 0] dB scale."""
    if dynamic_range <= 0:
        raise InvalidInputError("dynamic_range must be > 0")
    return levels.astype(np.float64) / 255.0 * dynamic_range - dynamic_range
