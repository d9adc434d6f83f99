import json

import numpy as np
import pytest

from splinet.errors import FormatError, SchemaError
from splinet.layers import network_forward
from splinet.modelio import VersionError, dumps, load_model, loads, save_model, to_dict
from splinet.zoo import random_network, small_cnn


@pytest.mark.parametrize("seed", range(5))
def test_roundtrip_bit_exact(tmp_path, rng, seed):
    net = random_network(seed)
    path = tmp_path / "m.json"
    save_model(net, path, rng_seed=seed)
    loaded, stored_seed = load_model(path)
    assert stored_seed == seed
    for _ in range(20):
        x = rng.standard_normal(net.in_dim)
        assert network_forward(loaded, x)[0].tobytes() == network_forward(net, x)[0].tobytes()


def test_small_cnn_roundtrip():
    net = small_cnn((1, 12, 12), 4, pooling="maxpool", width=(2, 3))
    again, _ = loads(dumps(net))
    assert dumps(again) == dumps(net)


def test_corrupted_json_offset():
    text = dumps(random_network(0))
    bad = text[:40] + "#" + text[41:]
    with pytest.raises(FormatError, match="byte offset 40"):
        loads(bad)


def test_missing_parameters_names_layer():
    doc = to_dict(random_network(1))
    doc["parameters"][0] = []
    with pytest.raises(SchemaError, match=r"layer 0 \(conv2d\)"):
        loads(json.dumps(doc))


def test_wrong_length_names_layer():
    doc = to_dict(random_network(1))
    doc["parameters"][0][1] = doc["parameters"][0][1][:-1]
    with pytest.raises(SchemaError, match="layer 0"):
        loads(json.dumps(doc))


def test_version_mismatch():
    doc = to_dict(random_network(1))
    doc["format_version"] = 99
    with pytest.raises(VersionError):
        loads(json.dumps(doc))


def test_missing_key():
    doc = to_dict(random_network(1))
    del doc["architecture"]
    with pytest.raises(SchemaError):
        loads(json.dumps(doc))


def test_floats_survive_text():
    net = random_network(2)
    p = net.params()[0].reshape(-1)
    p[0] = np.nextafter(1.0, 2.0)
    loaded, _ = loads(dumps(net))
    assert loaded.params()[0].reshape(-1)[0] == np.nextafter(1.0, 2.0)
