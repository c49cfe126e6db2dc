"""Binary checkpoints for networks (GRNW) and gate patterns (GRGP).

All integers and floats are little-endian; matrices are row-major f64.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import GatePattern, GReluNetwork, NetworkShape, ReluNetwork

NET_MAGIC = b"GRNW"
GATE_MAGIC = b"GRGP"
VERSION = 1

FLAG_NO_PSI = 1  # ReLU network: the Psi blocks are absent
FLAG_LINEAR_READOUT = 2  # output is B z_L rather than B relu(z_L)

_NET_HEAD = struct.Struct("<4sII4Q")
_GATE_HEAD = struct.Struct("<4s3Q")


def network_bytes(net) -> bytes:
    s = net.shape
    if isinstance(net, ReluNetwork):
        flags = FLAG_NO_PSI | (0 if net.output_relu else FLAG_LINEAR_READOUT)
        blocks = (net.C, net.B) + tuple(net.W)
    else:
        flags = 0
        blocks = (net.C, net.B) + tuple(net.Psi) + tuple(net.W)
    parts = [_NET_HEAD.pack(NET_MAGIC, VERSION, flags, s.d_x, s.d_y, s.m, s.L)]
    parts += [np.ascontiguousarray(b, dtype="<f8").tobytes() for b in blocks]
    return b"".join(parts)


def parse_network(buf: bytes):
    if len(buf) < 4 or buf[:4] != NET_MAGIC:
        raise FormatError("bad magic, expected GRNW", 0)
    if len(buf) < _NET_HEAD.size:
        raise FormatError("truncated header", len(buf))
    _, version, flags, d_x, d_y, m, L = _NET_HEAD.unpack_from(buf)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if flags & ~(FLAG_NO_PSI | FLAG_LINEAR_READOUT):
        raise FormatError(f"unknown flag bits {flags:#x}", 8)
    try:
        shape = NetworkShape(d_x, d_y, m, L)
    except ValueError as exc:
        raise FormatError(f"invalid shape: {exc}", 12) from None
    no_psi = bool(flags & FLAG_NO_PSI)
    dims = [(m, d_x), (d_y, m)] + [(m, m)] * (L if no_psi else 2 * L)
    off = _NET_HEAD.size
    blocks = []
    for r, c in dims:
        end = off + 8 * r * c
        if len(buf) < end:
            raise FormatError("truncated weight block", len(buf))
        blocks.append(np.frombuffer(buf, "<f8", r * c, off).reshape(r, c).astype(np.float64))
        off = end
    if len(buf) != off:
        raise FormatError("trailing bytes after weights", off)
    C, B, rest = blocks[0], blocks[1], blocks[2:]
    if no_psi:
        return ReluNetwork(shape, C, B, tuple(rest),
                           output_relu=not flags & FLAG_LINEAR_READOUT)
    return GReluNetwork(shape, C, B, tuple(rest[:L]), tuple(rest[L:]))


def save_network(net, path) -> None:
    Path(path).write_bytes(network_bytes(net))


def load_network(path):
    return parse_network(Path(path).read_bytes())


def gates_bytes(gates: GatePattern) -> bytes:
    n, depth1, _ = gates.bits.shape
    return _GATE_HEAD.pack(GATE_MAGIC, n, depth1, gates.m) + gates.bits.tobytes()


def parse_gates(buf: bytes) -> GatePattern:
    if len(buf) < 4 or buf[:4] != GATE_MAGIC:
        raise FormatError("bad magic, expected GRGP", 0)
    if len(buf) < _GATE_HEAD.size:
        raise FormatError("truncated header", len(buf))
    _, n, depth1, m = _GATE_HEAD.unpack_from(buf)
    if depth1 < 1 or m < 1:
        raise FormatError("gate file declares an empty layer", 12)
    row = (m + 7) // 8
    off = _GATE_HEAD.size
    end = off + n * depth1 * row
    if len(buf) < end:
        raise FormatError("truncated gate bits", len(buf))
    if len(buf) != end:
        raise FormatError("trailing bytes after gate bits", end)
    bits = np.frombuffer(buf, np.uint8, n * depth1 * row, off).reshape(n, depth1, row)
    return GatePattern(bits.copy(), m)


def save_gates(gates: GatePattern, path) -> None:
    Path(path).write_bytes(gates_bytes(gates))


def load_gates(path) -> GatePattern:
    return parse_gates(Path(path).read_bytes())
