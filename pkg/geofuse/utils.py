import math
import os
import tempfile
from pathlib import Path
from typing import Union


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> None:
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(
        prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent)
    )
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path: Union[str, Path], text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
