"""
Seed derivation shared by the corpus generator and the experiment runner.
"""

import hashlib


def derive_seed(seed, name):
    """
    Stable 32-bit sub-seed: the first 8 hex digits of SHA-256("{seed}:{name}").

    Example:
        derive_seed(7, "phone_net")  # same value on every platform and run
    """
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).hexdigest()
    return int(digest[:8], 16)
