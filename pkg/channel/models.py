"""
Data models for the slotted channel.

Models:
- ProtocolSpec: configuration of an existing node's MAC protocol
- NodeState: per-slot internal state of that protocol
- SlotOutcome: resolved slot as broadcast by the access point
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, FrozenSet, List, Optional

from .exceptions import ProtocolConfigError


DEFAULT_FRAME_LENGTH = 10
DEFAULT_MAX_BACKOFF_STAGE = 2


class ProtocolKind(str, Enum):
    """MAC protocol run by an existing node."""
    Q_ALOHA = "qaloha"
    FW_ALOHA = "fwaloha"
    EB_ALOHA = "ebaloha"
    TDMA = "tdma"


class Observation(int, Enum):
    """Channel feedback broadcast by the access point."""
    IDLE = 0
    SUCCESS = 1
    COLLISION = 2


@dataclass(frozen=True)
class ProtocolSpec:
    """
    Configuration of one existing node.

    Only the fields of the selected variant are meaningful:
    ``q`` for q-ALOHA, ``window`` for FW-ALOHA, ``window`` and ``max_stage``
    for EB-ALOHA, ``slot`` and ``frame_length`` for TDMA (slot is 1-based).
    """

    kind: ProtocolKind
    q: float = 0.0
    window: int = 1
    max_stage: int = DEFAULT_MAX_BACKOFF_STAGE
    slot: int = 1
    frame_length: int = DEFAULT_FRAME_LENGTH

    def __post_init__(self):
        if not isinstance(self.kind, ProtocolKind):
            try:
                object.__setattr__(self, "kind", ProtocolKind(self.kind))
            except ValueError:
                raise ProtocolConfigError(f"Unknown protocol kind: {self.kind!r}")

        if self.kind == ProtocolKind.Q_ALOHA and not 0.0 <= self.q <= 1.0:
            raise ProtocolConfigError(
                f"q-ALOHA probability must lie in [0, 1], got {self.q}",
                details={"q": self.q},
            )
        if self.kind in (ProtocolKind.FW_ALOHA, ProtocolKind.EB_ALOHA) and self.window < 1:
            raise ProtocolConfigError(
                f"ALOHA window must be >= 1, got {self.window}",
                details={"window": self.window},
            )
        if self.kind == ProtocolKind.EB_ALOHA and self.max_stage < 0:
            raise ProtocolConfigError(
                f"Maximum backoff stage must be >= 0, got {self.max_stage}",
                details={"max_stage": self.max_stage},
            )
        if self.kind == ProtocolKind.TDMA:
            if self.frame_length < 1:
                raise ProtocolConfigError(f"Frame length must be >= 1, got {self.frame_length}")
            if not 1 <= self.slot <= self.frame_length:
                raise ProtocolConfigError(
                    f"TDMA slot must lie in 1..{self.frame_length}, got {self.slot}",
                    details={"slot": self.slot, "frame_length": self.frame_length},
                )

    # ----- constructors -----

    @classmethod
    def q_aloha(cls, q: float) -> "ProtocolSpec":
        return cls(kind=ProtocolKind.Q_ALOHA, q=float(q))

    @classmethod
    def fw_aloha(cls, window: int) -> "ProtocolSpec":
        return cls(kind=ProtocolKind.FW_ALOHA, window=int(window))

    @classmethod
    def eb_aloha(cls, window: int, max_stage: int = DEFAULT_MAX_BACKOFF_STAGE) -> "ProtocolSpec":
        return cls(kind=ProtocolKind.EB_ALOHA, window=int(window), max_stage=int(max_stage))

    @classmethod
    def tdma(cls, slot: int, frame_length: int = DEFAULT_FRAME_LENGTH) -> "ProtocolSpec":
        return cls(kind=ProtocolKind.TDMA, slot=int(slot), frame_length=int(frame_length))

    @classmethod
    def from_string(cls, text: str) -> "ProtocolSpec":
        """Parse ``tdma:X[:F]``, ``qaloha:q``, ``fwaloha:W`` or ``ebaloha:W[:b]``."""
        parts = [p.strip() for p in text.strip().lower().split(":")]
        name, args = parts[0], parts[1:]
        try:
            if name == ProtocolKind.TDMA.value and len(args) in (1, 2):
                return cls.tdma(int(args[0]), *(int(a) for a in args[1:]))
            if name == ProtocolKind.Q_ALOHA.value and len(args) == 1:
                return cls.q_aloha(float(args[0]))
            if name == ProtocolKind.FW_ALOHA.value and len(args) == 1:
                return cls.fw_aloha(int(args[0]))
            if name == ProtocolKind.EB_ALOHA.value and len(args) in (1, 2):
                return cls.eb_aloha(int(args[0]), *(int(a) for a in args[1:]))
        except ValueError as e:
            raise ProtocolConfigError(f"Malformed protocol string {text!r}: {e}")
        raise ProtocolConfigError(
            f"Unrecognised protocol string {text!r}",
            details={"expected": "tdma:X[:F] | qaloha:q | fwaloha:W | ebaloha:W[:b]"},
        )

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProtocolSpec":
        """Create from a config-file record such as ``{"kind": "tdma", "slot": 5}``."""
        allowed = {"kind", "q", "window", "max_stage", "slot", "frame_length"}
        unknown = set(data) - allowed
        if unknown:
            raise ProtocolConfigError(
                f"Unknown protocol fields: {sorted(unknown)}",
                details={"allowed": sorted(allowed)},
            )
        if "kind" not in data:
            raise ProtocolConfigError("Protocol record is missing 'kind'")
        return cls(**data)

    # ----- presentation -----

    def to_string(self) -> str:
        """Inverse of ``from_string``."""
        if self.kind == ProtocolKind.TDMA:
            suffix = "" if self.frame_length == DEFAULT_FRAME_LENGTH else f":{self.frame_length}"
            return f"tdma:{self.slot}{suffix}"
        if self.kind == ProtocolKind.Q_ALOHA:
            return f"qaloha:{self.q:g}"
        if self.kind == ProtocolKind.FW_ALOHA:
            return f"fwaloha:{self.window}"
        suffix = "" if self.max_stage == DEFAULT_MAX_BACKOFF_STAGE else f":{self.max_stage}"
        return f"ebaloha:{self.window}{suffix}"

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind.value}
        if self.kind == ProtocolKind.Q_ALOHA:
            data["q"] = self.q
        elif self.kind == ProtocolKind.FW_ALOHA:
            data["window"] = self.window
        elif self.kind == ProtocolKind.EB_ALOHA:
            data.update(window=self.window, max_stage=self.max_stage)
        else:
            data.update(slot=self.slot, frame_length=self.frame_length)
        return data

    @property
    def label(self) -> str:
        """
        Human-readable notation, e.g. ``TDMA(5)`` or ``q-ALOHA(0.8)``. A
        non-default frame length or maximum backoff stage follows a colon,
        as in ``TDMA(5:20)`` or ``EB-ALOHA(3:4)``.
        """
        if self.kind == ProtocolKind.TDMA:
            suffix = "" if self.frame_length == DEFAULT_FRAME_LENGTH else f":{self.frame_length}"
            return f"TDMA({self.slot}{suffix})"
        if self.kind == ProtocolKind.Q_ALOHA:
            return f"q-ALOHA({self.q:g})"
        if self.kind == ProtocolKind.FW_ALOHA:
            return f"FW-ALOHA({self.window})"
        suffix = "" if self.max_stage == DEFAULT_MAX_BACKOFF_STAGE else f":{self.max_stage}"
        return f"EB-ALOHA({self.window}{suffix})"


def parse_scenario(text: str) -> List[ProtocolSpec]:
    """Parse ``tdma:2+qaloha:0.1`` into a list of protocol specs."""
    items = [chunk for chunk in text.split("+") if chunk.strip()]
    if not items:
        raise ProtocolConfigError("Scenario must contain at least one existing node")
    return [ProtocolSpec.from_string(chunk) for chunk in items]


def scenario_to_string(scenario: List[ProtocolSpec]) -> str:
    return "+".join(spec.to_string() for spec in scenario)


def scenario_label(scenario: List[ProtocolSpec]) -> str:
    return "+".join(spec.label for spec in scenario)


@dataclass(frozen=True)
class NodeState:
    """
    Internal protocol state of one existing node.

    ``counter`` is used by FW/EB-ALOHA, ``stage`` by EB-ALOHA and
    ``frame_pos`` (1-based) by TDMA; q-ALOHA keeps no state.
    """

    counter: int = 0
    stage: int = 0
    frame_pos: int = 1

    def evolve(self, **changes) -> "NodeState":
        return replace(self, **changes)


@dataclass(frozen=True)
class SlotOutcome:
    """Resolved slot: who transmitted, what the AP broadcast, who succeeded."""

    tx_set: FrozenSet[int] = field(default_factory=frozenset)
    obs: Observation = Observation.IDLE
    success_node: Optional[int] = None

    @property
    def agent_transmitted(self) -> bool:
        return 0 in self.tx_set

    def to_record(self, t: int) -> Dict[str, Any]:
        """Trace record ``{t, agentTx, obs, successNode}``."""
        return {
            "t": t,
            "agentTx": int(self.agent_transmitted),
            "obs": int(self.obs),
            "successNode": self.success_node,
        }
