"""
Simulated channel tests
"""

from __future__ import annotations

import numpy as np
import pytest

from cct.channel import ChannelConfig, loss_mask, transmit
from cct.errors import ConfigurationError
from cct.protocol import checksum_ok


class TestTransmit:

    def test_noiseless_is_identity(self, carrier) -> None:
        stream = carrier("tcp", n=50)
        config = ChannelConfig()
        assert config.noiseless
        assert transmit(config, stream) == stream

    def test_same_seed_same_output(self, carrier) -> None:
        stream = carrier("ipv4", n=300)
        config = ChannelConfig.preset("hostile", rng_seed=9)
        assert transmit(config, stream) == transmit(config, stream)

    def test_loss_matches_mask(self, carrier) -> None:
        stream = carrier("ipv4", n=2000)
        config = ChannelConfig(loss_prob=0.1, rng_seed=3)
        delivered = {p.seq for p in transmit(config, stream).pdus}
        lost = {i for i, gone in enumerate(loss_mask(config, len(stream))) if gone}
        assert delivered.isdisjoint(lost)
        assert len(delivered) + len(lost) == 2000
        assert 150 <= len(lost) <= 250

    def test_jitter_stays_bounded_and_fifo(self, carrier) -> None:
        stream = carrier("ipv4", n=500)
        received = transmit(ChannelConfig(jitter=100, rng_seed=1), stream)
        assert [p.seq for p in received.pdus] == list(range(500))
        shift = received.timestamps() - stream.timestamps()
        assert np.abs(shift).max() <= 100
        assert (np.diff(received.timestamps()) >= 0).all()

    def test_reorder_swaps_neighbours(self, carrier) -> None:
        stream = carrier("ipv4", n=400)
        received = transmit(ChannelConfig(reorder_prob=0.2, rng_seed=2), stream)
        seqs = [p.seq for p in received.pdus]
        assert sorted(seqs) == list(range(400))
        assert seqs != list(range(400))
        assert all(abs(seq - i) <= 1 for i, seq in enumerate(seqs))
        assert (np.diff(received.timestamps()) >= 0).all()

    def test_bit_flips_break_checksums(self, carrier) -> None:
        stream = carrier("ipv4", n=200)
        received = transmit(ChannelConfig(bit_flip_prob=0.01, rng_seed=4), stream)
        changed = [p for p, q in zip(stream.pdus, received.pdus) if p.header != q.header]
        assert changed
        assert any(not checksum_ok(p) for p in changed)

    def test_bit_flips_skip_textual_headers(self, carrier) -> None:
        stream = carrier("http", n=20)
        assert transmit(ChannelConfig(bit_flip_prob=0.5), stream) == stream


class TestPresets:

    @pytest.mark.parametrize("name", ["noiseless", "lan", "wan", "hostile"])
    def test_known(self, name: str) -> None:
        config = ChannelConfig.preset(name, rng_seed=5)
        assert config.rng_seed == 5
        assert config.noiseless is (name == "noiseless")

    def test_unknown(self) -> None:
        with pytest.raises(ConfigurationError, match="unknown channel preset"):
            ChannelConfig.preset("satellite")

    def test_probability_range(self) -> None:
        with pytest.raises(ValueError):
            ChannelConfig(loss_prob=1.5)
