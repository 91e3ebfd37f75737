"""Memory bank of instance embeddings.

Two filling modes are supported. ``momentum`` banks keep one slot per
labeled instance and blend new embeddings into it; ``fifo`` banks act as a
queue of the most recent unlabeled embeddings.
"""
import numpy as np

from . import kernels
from . import numcore as nc
from .errors import EmptyBank, ShapeMismatch, UnknownSlot

UNIT_TOL = 1e-6


class MemoryBank:
    def __init__(self, slots, ids=None, momentum=0.7, labels=None, mode="momentum",
                 renormalize=True):
        slots = np.array(slots, dtype=np.float64, ndmin=2)
        if slots.shape[0] < 1:
            raise EmptyBank("a bank needs at least one slot")
        if not 0.0 <= momentum <= 1.0:
            raise ValueError("bank momentum must lie in [0, 1]")
        if mode not in ("momentum", "fifo"):
            raise ValueError(f"unknown bank mode {mode!r}")
        ids = np.arange(slots.shape[0]) if ids is None else np.asarray(ids, dtype=np.int64)
        if ids.shape != (slots.shape[0],) or len(set(ids.tolist())) != ids.size:
            raise ValueError("slot ids must be unique, one per slot")
        self.slots = slots
        self.ids = ids
        self.momentum = float(momentum)
        self.labels = None if labels is None else np.array(labels, dtype=np.float64, ndmin=2)
        self.mode = mode
        self.renormalize = renormalize
        self._index = {int(i): r for r, i in enumerate(ids)}
        self._head = 0

    @property
    def size(self):
        return self.slots.shape[0]

    @property
    def dim(self):
        return self.slots.shape[1]

    def slot(self, slot_id):
        try:
            return self.slots[self._index[int(slot_id)]]
        except KeyError:
            raise UnknownSlot(slot_id) from None

    def update(self, slot_id, z):
        """Blend ``z`` into a slot: ``m * old + (1 - m) * z``, then re-normalize."""
        try:
            row = self._index[int(slot_id)]
        except KeyError:
            raise UnknownSlot(slot_id) from None
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.dim,):
            raise ShapeMismatch(f"embedding {z.shape} vs bank dim {self.dim}")
        target = self.slots[row]
        kernels.lerp_(target, z, self.momentum)
        if self.renormalize:
            self.slots[row] = nc.l2_normalize(target)
        return self

    def update_many(self, slot_ids, zs):
        """Sequential ``update`` for each (id, embedding) pair, in order."""
        for slot_id, z in zip(slot_ids, np.asarray(zs, dtype=np.float64)):
            self.update(slot_id, z)
        return self

    def enqueue(self, slot_ids, zs):
        """FIFO mode: overwrite the oldest slots with new embeddings."""
        zs = np.asarray(zs, dtype=np.float64)
        if zs.ndim != 2 or zs.shape[1] != self.dim:
            raise ShapeMismatch(f"embeddings {zs.shape} vs bank dim {self.dim}")
        for slot_id, z in zip(slot_ids, zs):
            row = self._head
            old = int(self.ids[row])
            if int(slot_id) != old and int(slot_id) in self._index:
                # id already queued elsewhere: keep ids unique by retiring it
                self.ids[self._index.pop(int(slot_id))] = -1 - row - self.size
            self._index.pop(old, None)
            self.ids[row] = int(slot_id)
            self._index[int(slot_id)] = row
            self.slots[row] = z
            self._head = (row + 1) % self.size
        return self

    def similarity_dist(self, z, T):
        """Softmax over slots of ``z . slot / T`` (vector or batch of rows)."""
        if self.size == 0:
            raise EmptyBank("bank is empty")
        zv = nc.value(z)
        if zv.shape[-1] != self.dim:
            raise ShapeMismatch(f"query dim {zv.shape[-1]} vs bank dim {self.dim}")
        return nc.softmax_t(nc.matmul(z, self.slots.T), T)

    def check_unit(self, tol=UNIT_TOL):
        return bool(np.all(np.abs(np.linalg.norm(self.slots, axis=1) - 1.0) <= tol))

    def state(self):
        return {
            "slots": self.slots.copy(),
            "ids": self.ids.copy(),
            "labels": None if self.labels is None else self.labels.copy(),
            "momentum": self.momentum,
            "mode": self.mode,
            "renormalize": self.renormalize,
            "head": self._head,
        }

    @classmethod
    def from_state(cls, st):
        bank = cls.__new__(cls)
        bank.slots = np.array(st["slots"], dtype=np.float64)
        bank.ids = np.array(st["ids"], dtype=np.int64)
        bank.labels = None if st.get("labels") is None else np.array(st["labels"], dtype=np.float64)
        bank.momentum = float(st["momentum"])
        bank.mode = st["mode"]
        bank.renormalize = bool(st["renormalize"])
        bank._index = {int(i): r for r, i in enumerate(bank.ids)}
        bank._head = int(st["head"])
        return bank
