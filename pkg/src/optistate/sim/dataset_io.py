"""Binary dataset files plus their ``key = value`` manifests.

Layout (little-endian): ``OSTD``, u32 version, f64 dt, u64 frame count,
u32 image height, u32 image width, u64 image count, the channel list
(u32 count, then name and u32 width per channel), the frame records as
float64 rows in channel order, then the depth rasters as float32.
"""
import os
import struct

import numpy as np

from ..binio import Reader, check_magic, pack_text
from ..config import format_kv, read_kv
from ..errors import FormatError
from ..frames import FRAME_FIELDS, RECORD_WIDTH, Dataset

MAGIC = b"OSTD"
VERSION = 1


def manifest_path(path):
    return os.fspath(path) + ".manifest"


def dataset_bytes(ds):
    records = ds.to_records()
    n, h, w = ds.depth.shape
    head = [MAGIC, struct.pack("<IdQIIQ", VERSION, ds.dt, len(ds), h, w, n),
            struct.pack("<I", len(FRAME_FIELDS))]
    head += [pack_text(name) + struct.pack("<I", width) for name, width in FRAME_FIELDS]
    depth = np.ascontiguousarray(ds.depth, dtype="<f4")
    return b"".join(head) + records.tobytes() + depth.tobytes()


def write_dataset(ds, path):
    """Write ``ds`` to ``path`` and its metadata to ``path.manifest``."""
    with open(path, "wb") as fh:
        fh.write(dataset_bytes(ds))
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        fh.write(format_kv(sorted(ds.meta.items())))


def read_dataset(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    r = Reader(buf, what=os.fspath(path))
    check_magic(r, MAGIC, VERSION)
    dt, n_frames, h, w, n_images = r.unpack("dQIIQ")
    channels = [(r.text(), r.u32()) for _ in range(r.u32())]
    if tuple(channels) != FRAME_FIELDS:
        raise FormatError(f"unexpected channel list {channels}")
    records = r.array("f8", (n_frames, RECORD_WIDTH))
    depth = r.array("f4", (n_images, h, w))
    r.expect_end()
    meta = {}
    if os.path.exists(manifest_path(path)):
        meta = read_kv(manifest_path(path))
    return Dataset.from_records(dt, records, depth, meta)
