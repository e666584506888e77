"""
Shared fixtures: shipped settings, generated carriers, the default warden.
"""

from __future__ import annotations

import pytest

from cct.codecs.base import CovertMessage
from cct.config import DEFAULT_SETTINGS_FILE, DEFAULT_WARDEN_FILE
from cct.countermeasures.normalizer import WardenConfig, load_warden
from cct.protocol import PduStream, make_carrier
from cct.schemas import get_schema
from cct.settings import SettingsCatalog, load_settings


@pytest.fixture(scope="session")
def settings_catalog() -> SettingsCatalog:
    return load_settings(DEFAULT_SETTINGS_FILE)


@pytest.fixture(scope="session")
def default_warden() -> WardenConfig:
    return load_warden(DEFAULT_WARDEN_FILE)


@pytest.fixture
def carrier():
    """carrier("ipv4", n=64, iat="constant:1000", seed=0)"""

    def build(schema: str, n: int = 64, iat: str = "constant:1000", seed: int = 0) -> PduStream:
        return make_carrier(get_schema(schema), n, iat, seed)

    return build


@pytest.fixture
def message():
    def build(nbits: int, seed: int = 1) -> CovertMessage:
        return CovertMessage.random(nbits, seed)

    return build
