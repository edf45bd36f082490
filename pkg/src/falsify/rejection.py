"""The distinguished marker for samples discarded by constraint rejection.

Scenario sampling returns ``REJECTED`` when no draw satisfies the declared
constraints, and adaptive samplers receive the same marker as feedback so
they can account for wasted episodes.  It is a singleton: identity checks
(``value is REJECTED``) are the intended way to test for it.
"""

from __future__ import annotations


class Rejected:
    """Singleton type marking a rejected sample."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "REJECTED"

    def __reduce__(self):
        return (Rejected, ())


REJECTED = Rejected()
