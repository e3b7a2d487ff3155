"""Ground-truth and proposed noise events."""

import enum
from dataclasses import dataclass


class Audibility(str, enum.Enum):
    """How easily an event could be heard at the receiver.

    Only `clear` counts as a noise event; `faint` and `not_heard` collapse
    to the negative class.
    """

    CLEAR = "clear"
    FAINT = "faint"
    NOT_HEARD = "not_heard"


ORIGIN_SOURCE = "source"
ORIGIN_INTERFERER = "interferer"


@dataclass
class EventLabel:
    """One noise event span, with optional audibility and origin.

    Segments proposed by the unsupervised labeler leave audibility unset;
    assigning it is a listening step outside this artifact. Synthetic truth
    sets both audibility and origin.
    """

    start_s: float
    end_s: float
    audibility: Audibility | None = None
    origin: str | None = None

    def __post_init__(self):
        if self.end_s <= self.start_s:
            raise ValueError("event end must be after start")
        if isinstance(self.audibility, str):
            self.audibility = Audibility(self.audibility)

    @property
    def binary(self) -> bool:
        """True only for clearly audible events."""
        return self.audibility == Audibility.CLEAR

    def overlaps(self, t_lo: float, t_hi: float) -> bool:
        """Half-open interval overlap with [t_lo, t_hi)."""
        return self.start_s < t_hi and t_lo < self.end_s

    def to_dict(self) -> dict:
        d = {"start": self.start_s, "end": self.end_s}
        if self.audibility is not None:
            d["audibility"] = self.audibility.value
        if self.origin is not None:
            d["origin"] = self.origin
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EventLabel":
        return cls(
            start_s=float(d["start"]),
            end_s=float(d["end"]),
            audibility=Audibility(d["audibility"]) if d.get("audibility") else None,
            origin=d.get("origin"),
        )
