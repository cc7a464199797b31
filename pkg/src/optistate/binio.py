"""Little-endian binary helpers shared by dataset and checkpoint files."""
import struct

import numpy as np

from .errors import FormatError


class Reader:
    """Sequential reader over a bytes buffer that raises FormatError on underrun."""

    def __init__(self, buf, what="file"):
        self.buf = memoryview(buf)
        self.pos = 0
        self.what = what

    def take(self, n):
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(f"{self.what} truncated at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def u32(self):
        return self.unpack("I")[0]

    def u64(self):
        return self.unpack("Q")[0]

    def f64(self):
        return self.unpack("d")[0]

    def text(self):
        n = self.u32()
        return bytes(self.take(n)).decode("utf-8")

    def array(self, dtype, shape):
        dtype = np.dtype(dtype).newbyteorder("<")
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))

    def expect_end(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what} has {len(self.buf) - self.pos} trailing bytes")


def pack_text(s):
    data = s.encode("utf-8")
    return struct.pack("<I", len(data)) + data


def check_magic(reader, magic, version):
    got = bytes(reader.take(len(magic)))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    ver = reader.u32()
    if ver != version:
        raise FormatError(f"unsupported version {ver} (expected {version})")


def pack_tensors(tensors):
    """Encode ``{name: array}`` as count, then name, rank, dims and f64 data each."""
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(pack_text(name))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def unpack_tensors(reader):
    out = {}
    for _ in range(reader.u32()):
        name = reader.text()
        ndim = reader.u32()
        shape = reader.unpack(f"{ndim}Q") if ndim else ()
        out[name] = reader.array("f8", shape)
    return out
