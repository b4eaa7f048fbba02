from __future__ import annotations

import pytest

from tmiusim import CardIdentity, DeviceIdentity, EntryKind, provision
from tmiusim.image import ProvisionResult

FIXTURE_DNA = 0x0123456789ABCD
FIXTURE_KDF_REPETITIONS = 25  # full-strength stretching is exercised separately

BOOT_ENTRIES = [
    (EntryKind.PARTIAL_BITSTREAM, b"\xaa\x55" * 900),
    (EntryKind.SSBL, b"ssbl-code " * 313),
    (EntryKind.KERNEL, bytes(range(256)) * 37),
    (EntryKind.DEVICETREE, b"\x00compatible\x00" * 61),
]
DATA_FILES = [
    ("etc/config.txt", b"mode=field\nrelay=7\n" * 41),
    ("var/log.bin", bytes((i * 7) % 256 for i in range(3000))),
    ("keys.db", b"\x00" * 700),
]


def make_provision(
    dna: int = FIXTURE_DNA,
    card_seed: bytes = b"fixture-card",
    **kwargs,
) -> ProvisionResult:
    kwargs.setdefault("kdf_repetitions", FIXTURE_KDF_REPETITIONS)
    return provision(
        BOOT_ENTRIES,
        DATA_FILES,
        DeviceIdentity(dna=dna),
        CardIdentity.from_seed(card_seed),
        **kwargs,
    )


@pytest.fixture(scope="session")
def provisioned() -> ProvisionResult:
    """A standard provisioned image; clone the image before mutating it."""
    return make_provision()
