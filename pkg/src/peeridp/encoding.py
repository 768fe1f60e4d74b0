"""Text encodings shared across the package.

Namespace ids and random labels travel as lowercase unpadded base32 (the
only alphabet that is safe in name-system labels, URLs and filenames alike).
Tickets and token segments use unpadded base64url.
"""

import base64
import binascii


def b32(data: bytes) -> str:
    """Lowercase base32 without padding."""
    return base64.b32encode(data).decode("ascii").rstrip("=").lower()


def unb32(text: str) -> bytes:
    pad = "=" * (-len(text) % 8)
    try:
        return base64.b32decode(text.upper() + pad)
    except (binascii.Error, ValueError) as e:
        raise ValueError(f"invalid base32: {e}") from e


def b64u(data: bytes) -> str:
    """base64url without padding."""
    return base64.urlsafe_b64encode(data).decode("ascii").rstrip("=")


def unb64u(text: str) -> bytes:
    pad = "=" * (-len(text) % 4)
    try:
        return base64.urlsafe_b64decode(text + pad)
    except (binascii.Error, ValueError) as e:
        raise ValueError(f"invalid base64url: {e}") from e
