import struct

import numpy as np
import pytest

from grelu.checkpoint import (gates_bytes, load_gates, load_network, network_bytes,
                              parse_gates, parse_network, save_gates, save_network)
from grelu.convert import grelu_to_relu
from grelu.errors import FormatError
from grelu.model import GReluNetwork, ReluNetwork

from conftest import make_instance


def arrays(net):
    extra = net.Psi if isinstance(net, GReluNetwork) else ()
    return (net.C, net.B) + tuple(extra) + tuple(net.W)


def test_grelu_roundtrip(tmp_path):
    net, g, _ = make_instance(n=3, d_y=2, m=9, L=3)
    save_network(net, tmp_path / "n.grnw")
    back = load_network(tmp_path / "n.grnw")
    assert isinstance(back, GReluNetwork) and back.shape == net.shape
    assert all(a.tobytes() == b.tobytes() for a, b in zip(arrays(net), arrays(back)))
    raw = network_bytes(net)
    assert raw[:4] == b"GRNW"
    assert struct.unpack_from("<II4Q", raw, 4) == (1, 0, 4, 2, 9, 3)
    assert len(raw) == 44 + 8 * (9 * 4 + 2 * 9 + 6 * 81)


def test_relu_roundtrip_flags():
    net, g, ds = make_instance(n=3, m=9, L=2)
    relu = grelu_to_relu(net, g, ds)
    raw = network_bytes(relu)
    assert struct.unpack_from("<I", raw, 8)[0] == 3
    back = parse_network(raw)
    assert isinstance(back, ReluNetwork) and back.output_relu is False
    assert all(a.tobytes() == b.tobytes() for a, b in zip(arrays(relu), arrays(back)))
    plain = ReluNetwork.from_grelu(net)
    assert struct.unpack_from("<I", network_bytes(plain), 8)[0] == 1
    assert parse_network(network_bytes(plain)).output_relu is True


def test_network_format_errors():
    net, _, _ = make_instance(m=4, L=1)
    raw = network_bytes(net)
    with pytest.raises(FormatError) as e:
        parse_network(b"NOPE" + raw[4:])
    assert e.value.offset == 0
    with pytest.raises(FormatError) as e:
        parse_network(raw[:-1])
    assert e.value.offset == len(raw) - 1
    with pytest.raises(FormatError) as e:
        parse_network(raw + b"x")
    assert e.value.offset == len(raw)
    bad = bytearray(raw)
    bad[8] = 0x80
    with pytest.raises(FormatError):
        parse_network(bytes(bad))


def test_gates_roundtrip_and_errors(tmp_path):
    _, g, _ = make_instance(n=4, m=13, L=2)
    save_gates(g, tmp_path / "g.grgp")
    assert load_gates(tmp_path / "g.grgp") == g
    raw = gates_bytes(g)
    assert raw[:4] == b"GRGP"
    assert struct.unpack_from("<3Q", raw, 4) == (4, 3, 13)
    assert len(raw) == 28 + 4 * 3 * 2
    with pytest.raises(FormatError) as e:
        parse_gates(raw[:-2])
    assert e.value.offset == len(raw) - 2
    with pytest.raises(FormatError):
        parse_gates(b"GRNW" + raw[4:])
