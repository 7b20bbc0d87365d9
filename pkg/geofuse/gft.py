import struct
from io import BytesIO
from typing import List, Optional

import numpy as np

from .errors import FormatError, GeofuseError, ParameterError
from .fusion import ChannelProvenance, FusedTensor, NormRule
from .raster import GeoTransform

GFT_MAGIC = b"GFT1"
DTYPE_FLOAT32 = 1

_dtype_codes = {DTYPE_FLOAT32: np.dtype("<f4")}


def encode_provenance(provenance: List[ChannelProvenance]) -> bytes:
    lines = []
    for index, record in enumerate(provenance):
        fields = [record.source, record.rule.token()]
        if record.prior_hash is not None:
            fields.append(record.prior_hash)
        for value in fields:
            if "\t" in value or "\n" in value:
                raise FormatError(
                    f"GFT: Provenance field of channel {index} "
                    "contains a tab or newline"
                )
        lines.append("\t".join(fields))
    return "".join(f"{line}\n" for line in lines).encode("utf-8")


def decode_provenance(data: bytes, channel_count: int) -> List[ChannelProvenance]:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("GFT: Provenance blob is not UTF-8") from None

    lines = text.split("\n")
    if len(lines) != channel_count + 1 or lines[-1] != "":
        raise FormatError(
            f"GFT: Provenance has {len(lines) - 1} lines, expected {channel_count}"
        )

    records = []
    for line in lines[:-1]:
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise FormatError(f"GFT: Malformed provenance line ({line!r})")
        try:
            rule = NormRule.parse(fields[1])
        except GeofuseError as e:
            raise FormatError(f"GFT: {e}") from None
        records.append(
            ChannelProvenance(
                source=fields[0],
                rule=rule,
                prior_hash=fields[2] if len(fields) == 3 else None,
            )
        )
    return records


def write_gft(tensor: FusedTensor) -> bytes:
    channel_count = tensor.n_channels
    height, width = tensor.shape
    if channel_count == 0 or height == 0 or width == 0:
        raise FormatError(
            f"GFT: Empty tensor ({channel_count}x{height}x{width}) cannot be written"
        )
    if not np.all(np.isfinite(tensor.data)):
        raise FormatError("GFT: Tensor has non-finite values")

    bio = BytesIO()
    bio.write(GFT_MAGIC)  # 4 bytes
    bio.write(channel_count.to_bytes(4, byteorder="little"))
    bio.write(height.to_bytes(8, byteorder="little"))
    bio.write(width.to_bytes(8, byteorder="little"))
    bio.write(DTYPE_FLOAT32.to_bytes(1, byteorder="little"))

    if tensor.transform is not None:
        bio.write(b"\x01")
        bio.write(struct.pack("<6d", *tensor.transform.to_gdal()))
    else:
        bio.write(b"\x00")

    provenance_bytes = encode_provenance(tensor.provenance)
    bio.write(len(provenance_bytes).to_bytes(4, byteorder="little"))
    bio.write(provenance_bytes)

    bio.write(tensor.data.astype("<f4", copy=False).tobytes(order="C"))

    return bio.getvalue()


def _read_exact(bio: BytesIO, size: int, what: str) -> bytes:
    data = bio.read(size)
    if len(data) != size:
        raise FormatError(f"GFT: Truncated {what} ({len(data)} < {size} bytes)")
    return data


def read_gft(data: bytes) -> FusedTensor:
    bio = BytesIO(data)
    magic = _read_exact(bio, 4, "magic")
    if magic != GFT_MAGIC:
        raise FormatError(f"GFT: Invalid magic ({magic!r})")

    channel_count = int.from_bytes(_read_exact(bio, 4, "header"), byteorder="little")
    height = int.from_bytes(_read_exact(bio, 8, "header"), byteorder="little")
    width = int.from_bytes(_read_exact(bio, 8, "header"), byteorder="little")
    dtype_code = int.from_bytes(_read_exact(bio, 1, "header"), byteorder="little")
    if dtype_code not in _dtype_codes:
        raise FormatError(f"GFT: Unknown dtype code ({dtype_code})")
    if channel_count == 0 or height == 0 or width == 0:
        raise FormatError(f"GFT: Empty tensor ({channel_count}x{height}x{width})")

    has_transform = _read_exact(bio, 1, "header")[0]
    if has_transform not in (0, 1):
        raise FormatError(f"GFT: Invalid transform flag ({has_transform})")

    transform: Optional[GeoTransform] = None
    if has_transform == 1:
        values = struct.unpack("<6d", _read_exact(bio, 48, "transform"))
        try:
            transform = GeoTransform.from_gdal(values)
        except ParameterError as e:
            raise FormatError(f"GFT: {e}") from None

    provenance_size = int.from_bytes(
        _read_exact(bio, 4, "provenance length"), byteorder="little"
    )
    provenance = decode_provenance(
        _read_exact(bio, provenance_size, "provenance"), channel_count
    )

    dtype = _dtype_codes[dtype_code]
    remaining = len(data) - bio.tell()
    expected = channel_count * height * width * dtype.itemsize
    if remaining != expected:
        raise FormatError(
            f"GFT: Payload is {remaining} bytes, expected {expected} "
            f"for {channel_count}x{height}x{width}"
        )
    payload = np.frombuffer(data, dtype=dtype, offset=bio.tell())
    payload = payload.reshape(channel_count, height, width)

    return FusedTensor(data=payload, provenance=provenance, transform=transform)


def write_gft_matrix(matrix: np.ndarray, name: str = "matrix") -> bytes:
    """Store a rows x cols matrix as a single-channel GFT without a transform."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float32))
    if matrix.ndim != 2:
        raise FormatError(f"GFT: Expected a 2-D matrix ({matrix.shape})")
    return write_gft(
        FusedTensor(
            data=matrix[None, :, :],
            provenance=[ChannelProvenance(source=name, rule=NormRule(kind="identity"))],
        )
    )


def read_gft_matrix(data: bytes) -> np.ndarray:
    tensor = read_gft(data)
    if tensor.n_channels != 1:
        raise FormatError(f"GFT: Expected one channel, found {tensor.n_channels}")
    return np.array(tensor.data[0])
