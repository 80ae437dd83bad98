"""QAF1 binary container shared by quantizer stacks, detector models and trials.

Layout, all integers little-endian::

    b'QAF1'  u16 version (=1)  u16 record count
    per record:
        u8 name length, name bytes (utf-8)
        u8 rank, rank x u32 dims
        u8 dtype (0 = f32, 1 = u32)
        payload, prod(dims) little-endian values

Records keep their insertion order.
"""
import logging
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import FormatError
from .rvq import QuantizerStack

logger = logging.getLogger(__name__)

MAGIC = b'QAF1'
VERSION = 1
F32 = 0
U32 = 1
_DTYPES = {F32: np.dtype('<f4'), U32: np.dtype('<u4')}
_MAX_RECORDS = 0xFFFF


def _dtype_code(name, array):
    if array.dtype == np.bool_ or np.issubdtype(array.dtype, np.integer):
        if array.size and (array.min() < 0 or array.max() > 0xFFFFFFFF):
            raise FormatError(f'record {name!r}: integer values outside the u32 range')
        return U32
    if np.issubdtype(array.dtype, np.floating):
        return F32
    raise FormatError(f'record {name!r}: unsupported dtype {array.dtype}')


def encode_records(records):
    """Serialize an ordered mapping of name -> array into QAF1 bytes."""
    if len(records) > _MAX_RECORDS:
        raise FormatError(f'{len(records)} records exceed the QAF1 limit of {_MAX_RECORDS}')
    chunks = [MAGIC, struct.pack('<HH', VERSION, len(records))]
    for name, value in records.items():
        array = np.asarray(value)
        raw_name = name.encode('utf-8')
        if not 0 < len(raw_name) < 256:
            raise FormatError(f'record name {name!r} must be 1-255 bytes')
        if array.ndim > 255:
            raise FormatError(f'record {name!r}: rank {array.ndim} is too large')
        code = _dtype_code(name, array)
        chunks.append(struct.pack('<B', len(raw_name)) + raw_name)
        chunks.append(struct.pack(f'<B{array.ndim}I', array.ndim, *array.shape))
        chunks.append(struct.pack('<B', code))
        chunks.append(np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes())
    return b''.join(chunks)


def decode_records(data, source='<bytes>'):
    """Parse QAF1 bytes into an ``OrderedDict`` of name -> array.

    Float records come back as float32 arrays, index records as uint32.
    """
    view = memoryview(data)
    pos = 0

    def take(size, what):
        nonlocal pos
        if pos + size > len(view):
            raise FormatError(f'{source}: truncated while reading {what}')
        chunk = view[pos:pos + size]
        pos += size
        return chunk

    if bytes(take(4, 'magic')) != MAGIC:
        raise FormatError(f'{source}: not a QAF1 container (bad magic)')
    version, count = struct.unpack('<HH', take(4, 'header'))
    if version != VERSION:
        raise FormatError(f'{source}: unsupported QAF1 version {version}')
    records = OrderedDict()
    for r in range(count):
        (name_len,) = struct.unpack('<B', take(1, f'record {r} name length'))
        try:
            name = bytes(take(name_len, f'record {r} name')).decode('utf-8')
        except UnicodeDecodeError:
            raise FormatError(f'{source}: record {r} name is not utf-8') from None
        if name in records:
            raise FormatError(f'{source}: duplicate record {name!r}')
        (rank,) = struct.unpack('<B', take(1, f'{name} rank'))
        dims = struct.unpack(f'<{rank}I', take(4 * rank, f'{name} dims'))
        (code,) = struct.unpack('<B', take(1, f'{name} dtype'))
        if code not in _DTYPES:
            raise FormatError(f'{source}: record {name!r} has unknown dtype {code}')
        dtype = _DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64))
        payload = take(size * dtype.itemsize, f'{name} payload')
        records[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if pos != len(view):
        raise FormatError(f'{source}: {len(view) - pos} trailing bytes after last record')
    return records


def write_records(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_records(records))
    logger.info('wrote %d records to %s', len(records), path)
    return path


def read_records(path):
    path = Path(path)
    if not path.is_file():
        raise FormatError(f'{path}: file not found')
    return decode_records(path.read_bytes(), source=str(path))


def stack_records(stack, prefix='stack'):
    return OrderedDict([(f'{prefix}.codewords', stack.to_array())])


def stack_from_records(records, prefix='stack', source='<records>'):
    key = f'{prefix}.codewords'
    if key not in records:
        raise FormatError(f'{source}: missing record {key!r}')
    array = records[key]
    if array.ndim != 3:
        raise FormatError(f'{source}: {key!r} must be QxKxD, got shape {array.shape}')
    return QuantizerStack.from_array(array.astype(np.float64))


def write_stack(stack, path):
    return write_records(path, stack_records(stack))


def read_stack(path):
    return stack_from_records(read_records(path), source=str(path))
