"""Small file helpers: atomic writes, hashing, strict UTF-8 decoding."""

import hashlib
import os
import tempfile

from topicmine.errors import InputError


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def decode_utf8(data: bytes, source: str) -> str:
    """Decode bytes as UTF-8, reporting the byte offset on failure."""
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InputError(
            f"{source}: invalid UTF-8 at byte offset {exc.start}"
        ) from exc


def read_utf8(path) -> str:
    with open(path, "rb") as fh:
        return decode_utf8(fh.read(), str(path))


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
