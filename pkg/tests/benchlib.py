import random

from locklab.cloud import Cloud, Manufacturer
from locklab.link import LockClient, open_transport
from locklab.lock import BroadcastChannel


class Bench:
    """One manufacturer, one cloud, one lock and a client for it."""

    def __init__(self, profile, seed=7, transport="inproc"):
        self.profile = profile
        self.maker = Manufacturer(random.Random(seed))
        self.cloud = Cloud(self.maker, profile, random.Random(seed + 1))
        self.air = BroadcastChannel()
        self.lock = self.maker.provision_lock(profile, self.air)
        self._transports = []
        self.client = self.connect(self.lock, transport)

    def connect(self, lock, transport="inproc"):
        t = open_transport(lock, transport)
        self._transports.append(t)
        return LockClient(t)

    def close(self):
        for t in self._transports:
            t.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
