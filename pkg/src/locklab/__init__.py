"""Desk-scale smart padlock security testbed.

Emulates a fingerprint padlock, its vendor cloud and phone app, and an
attacker toolkit that converts a fresh lock into a fingerprint harvester.
Every control that defeats a step of that chain can be toggled through a
:class:`~locklab.profile.SecurityProfile`.
"""

from locklab.errors import ErrorCode, LockLabError
from locklab.profile import HARDENED, VULNERABLE, SecurityProfile

__all__ = ["ErrorCode", "LockLabError", "SecurityProfile", "VULNERABLE", "HARDENED"]
__version__ = "0.1.0"
