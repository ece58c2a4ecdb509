"""Seed splitting.

Every random draw in a run comes from ``derive_seed(base, *labels)``: the
SHA-256 of the base seed and the labels joined by ``/``, truncated to 63
bits. Sub-seeds depend only on their own labels, so adding a controller
or a slice never perturbs the draws of another component.
"""

import hashlib


def derive_seed(base, *labels):
    text = "/".join([str(int(base))] + [str(label) for label in labels])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1
