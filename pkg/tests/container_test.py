import struct
from collections import OrderedDict

import numpy as np
import pytest

from qaf_static.container import (
    decode_records, encode_records, read_records, read_stack, write_stack
)
from qaf_static.errors import FormatError
from qaf_static.rvq import QuantizerStack


def header(count, version=1):
    return b'QAF1' + struct.pack('<HH', version, count)


def test_byte_layout():
    data = encode_records({'a': np.array([1.0, 2.0])})
    expected = (
        header(1) + b'\x01a' + struct.pack('<BI', 1, 2) + b'\x00'
        + struct.pack('<2f', 1.0, 2.0)
    )
    assert data == expected


def test_records_keep_order_dtype_and_shape():
    records = OrderedDict([
        ('z.scalar', np.array(7, dtype=np.uint32)),
        ('a.matrix', np.arange(6, dtype=np.float64).reshape(2, 3)),
        ('m.indices', np.array([[0, 3], [2, 1]], dtype=np.int64)),
    ])
    decoded = decode_records(encode_records(records))
    assert list(decoded) == list(records)
    assert decoded['z.scalar'].shape == ()
    assert decoded['z.scalar'].dtype == np.uint32
    assert decoded['a.matrix'].dtype == np.float32
    np.testing.assert_array_equal(decoded['a.matrix'], records['a.matrix'])
    np.testing.assert_array_equal(decoded['m.indices'], records['m.indices'])


@pytest.mark.parametrize('data,message', [
    (b'QAF2' + struct.pack('<HH', 1, 0), 'magic'),
    (header(0, version=2), 'version'),
    (header(1) + b'\x01a', 'truncated'),
    (header(1) + b'\x01a' + struct.pack('<BI', 1, 1) + b'\x07' + b'\0' * 4, 'dtype'),
    (header(0) + b'\x00', 'trailing'),
    (b'QA', 'truncated'),
])
def test_corrupted_containers(data, message):
    with pytest.raises(FormatError, match=message):
        decode_records(data)


def test_duplicate_record_names():
    record = b'\x01a' + struct.pack('<B', 0) + b'\x01' + struct.pack('<I', 5)
    with pytest.raises(FormatError, match='duplicate'):
        decode_records(header(2) + record + record)


def test_encode_rejects_unsupported_values():
    with pytest.raises(FormatError):
        encode_records({'neg': np.array([-1], dtype=np.int64)})
    with pytest.raises(FormatError):
        encode_records({'text': np.array(['x'])})
    with pytest.raises(FormatError):
        encode_records({'': np.zeros(1)})


def test_missing_file(tmp_path):
    with pytest.raises(FormatError, match='not found'):
        read_records(tmp_path / 'absent.qaf')


def test_stack_file(tmp_path):
    codewords = np.random.default_rng(0).standard_normal((2, 3, 4))
    path = write_stack(QuantizerStack.from_array(codewords), tmp_path / 'sub' / 'stack.qaf')
    loaded = read_stack(path)
    np.testing.assert_array_equal(loaded.to_array(), codewords.astype(np.float32))
