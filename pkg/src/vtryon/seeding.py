"""Deterministic seed derivation.

Python's builtin ``hash`` is salted per process, so every derived seed here
goes through blake2b instead. ``stable_seed`` maps an arbitrary tuple of
ints/strings to a 63-bit seed reproducibly across processes and platforms.
"""

from __future__ import annotations

import hashlib


def stable_seed(*parts: int | str) -> int:
    tag = "\x1f".join(f"{type(p).__name__}:{p}" for p in parts)
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


def stable_text_id(text: str, vocab_size: int) -> int:
    """Bucket a string into [0, vocab_size) without salted hashing."""
    if vocab_size <= 0:
        raise ValueError("vocab_size must be positive")
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % vocab_size
