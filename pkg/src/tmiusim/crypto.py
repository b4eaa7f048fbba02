"""Checksum, cipher, and key-derivation primitives for the guarded data path.

Everything here is a pure function of its inputs: the SD-standard CRC7/CRC16
line checksums, SHA-256, the AES-128 sector cipher in counter mode, the keyed
per-sector integrity tag, and the concatenation KDF that expands a 57-bit
device identifier and a 128-bit card identifier into the symmetric keys.
"""

from __future__ import annotations

import binascii
import hashlib
import hmac
import struct
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

SECTOR_SIZE = 512
AES_BLOCK_SIZE = 16
AES_KEY_SIZE = 16
MAC_KEY_SIZE = 32
DIGEST_SIZE = 32

CRC7_POLY = 0x09  # x^7 + x^3 + 1, SD command line
CRC16_POLY = 0x1021  # x^16 + x^12 + x^5 + 1 (XMODEM), SD data line

# Counter offset separating the integrity-key chain from the cipher-key chain
# (ASCII "MA").
MAC_COUNTER_OFFSET = 0x4D41


def _build_crc7_table() -> tuple[int, ...]:
    table = []
    for byte in range(256):
        reg = 0
        for i in range(7, -1, -1):
            feedback = ((byte >> i) & 1) ^ ((reg >> 6) & 1)
            reg = (reg << 1) & 0x7F
            if feedback:
                reg ^= CRC7_POLY
        table.append(reg)
    return tuple(table)


_CRC7_TABLE = _build_crc7_table()


def crc7(message: bytes) -> int:
    """7-bit CRC over ``message`` (poly 0x09, init 0, no reflection)."""
    crc = 0
    for byte in message:
        crc = _CRC7_TABLE[((crc << 1) ^ byte) & 0xFF]
    return crc


def crc16(block: bytes) -> int:
    """16-bit CRC over ``block`` (poly 0x1021, init 0, no reflection)."""
    # binascii.crc_hqx is exactly CRC-16/XMODEM, the SD data-line CRC.
    return binascii.crc_hqx(block, 0)


def sha256(message: bytes) -> bytes:
    """FIPS-180-4 SHA-256, 32-byte digest."""
    return hashlib.sha256(message).digest()


def hmac_sha256(key: bytes, message: bytes) -> bytes:
    return hmac.new(key, message, hashlib.sha256).digest()


@dataclass(frozen=True)
class KdfInput:
    """Inputs of the concatenation KDF.

    ``secret`` is the 8-byte big-endian encoding of the 57-bit device
    identifier (top 7 bits zero); ``other_info`` is the 16-byte card
    identifier acting as public salt; ``repetitions`` chains the hash to
    stretch the short secret.
    """

    counter: int
    secret: bytes
    other_info: bytes
    repetitions: int = 1000

    def __post_init__(self) -> None:
        if not 0 <= self.counter <= 0xFFFFFFFF:
            raise ValueError("counter must fit in 32 bits")
        if len(self.secret) != 8:
            raise ValueError("secret must be 8 bytes")
        if self.secret[0] & 0xFE:
            raise ValueError("secret exceeds 57 bits")
        if len(self.other_info) != 16:
            raise ValueError("other_info must be 16 bytes")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


def _kdf_chain(counter: int, seed: bytes, other_info: bytes, repetitions: int) -> bytes:
    material = seed
    for i in range(repetitions):
        prefix = struct.pack(">I", (counter + i) & 0xFFFFFFFF)
        material = sha256(prefix + material + other_info)
    return material


def derive_key(params: KdfInput) -> bytes:
    """Derive the 16-byte AES key: chained H(counter+i || D_i || other_info)."""
    digest = _kdf_chain(params.counter, params.secret, params.other_info, params.repetitions)
    return digest[:AES_KEY_SIZE]


def derive_mac_key(params: KdfInput) -> bytes:
    """Derive the independent 32-byte integrity key (counter offset chain)."""
    counter = (params.counter + MAC_COUNTER_OFFSET) & 0xFFFFFFFF
    return _kdf_chain(counter, params.secret, params.other_info, params.repetitions)


def aes_encrypt_block(key: bytes, block: bytes) -> bytes:
    """Raw AES-128 encryption of one 16-byte block."""
    if len(key) != AES_KEY_SIZE:
        raise ValueError("key must be 16 bytes")
    if len(block) != AES_BLOCK_SIZE:
        raise ValueError("block must be 16 bytes")
    encryptor = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return encryptor.update(block) + encryptor.finalize()


def _keystream(key: bytes, sector_index: int) -> bytes:
    # Counter block j of a sector is be64(sector_index) || be64(j); encrypting
    # the concatenated counter blocks in ECB yields the CTR keystream.
    blocks = b"".join(
        struct.pack(">QQ", sector_index, j) for j in range(SECTOR_SIZE // AES_BLOCK_SIZE)
    )
    encryptor = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return encryptor.update(blocks) + encryptor.finalize()


def _xor(a: bytes, b: bytes) -> bytes:
    n = len(a)
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(n, "big")


def encrypt_sector(key: bytes, sector_index: int, plaintext: bytes) -> bytes:
    """AES-128-CTR over one 512-byte sector, keyed by the sector index."""
    if len(plaintext) != SECTOR_SIZE:
        raise ValueError("sector plaintext must be 512 bytes")
    if not 0 <= sector_index < 1 << 64:
        raise ValueError("sector index must fit in 64 bits")
    return _xor(plaintext, _keystream(key, sector_index))


def decrypt_sector(key: bytes, sector_index: int, ciphertext: bytes) -> bytes:
    """Inverse of :func:`encrypt_sector` (CTR: the same keystream XOR)."""
    if len(ciphertext) != SECTOR_SIZE:
        raise ValueError("sector ciphertext must be 512 bytes")
    return encrypt_sector(key, sector_index, ciphertext)


def sector_tag(mac_key: bytes, sector_index: int, ciphertext: bytes) -> bytes:
    """Keyed integrity tag binding a ciphertext sector to its index."""
    if len(ciphertext) != SECTOR_SIZE:
        raise ValueError("sector ciphertext must be 512 bytes")
    return hmac_sha256(mac_key, struct.pack(">Q", sector_index) + ciphertext)
