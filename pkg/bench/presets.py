"""
Named task sets and change schedules.

Every experiment of the evaluation is addressable by name so that a run
can be reproduced from the preset alone.
"""

from typing import Dict, List, Optional, Tuple

from channel.environment import TaskSpec
from harness.training import DynamicSegment

from .exceptions import UnknownPresetError


# q-ALOHA and TDMA sweeps add environments in this order
QALOHA_SWEEP = (0.1, 0.7, 0.5, 0.3, 0.9)
TDMA_SWEEP = (1, 9, 5, 3, 7)

TASK_SETS: Dict[str, Tuple[str, ...]] = {
    "trainset-8": (
        "tdma:1", "tdma:5", "tdma:9",
        "qaloha:0.1", "qaloha:0.7",
        "fwaloha:3", "fwaloha:4",
        "ebaloha:2",
    ),
    "diversity-set-1": tuple(f"tdma:{x}" for x in (1, 2, 3, 5, 6, 7, 8, 9)),
    "diversity-set-2": (*(f"tdma:{x}" for x in (1, 3, 5, 6, 7, 9)), "qaloha:0.1", "qaloha:0.7"),
    "diversity-set-3": (*(f"tdma:{x}" for x in (1, 5, 6, 7, 9)), "qaloha:0.1", "qaloha:0.7", "ebaloha:2"),
    "diversity-set-4": (
        "tdma:1", "tdma:5", "tdma:9",
        "qaloha:0.1", "qaloha:0.7",
        "fwaloha:3", "fwaloha:4",
        "ebaloha:2",
    ),
    "testset-6": (
        "tdma:5",
        "qaloha:0.8",
        "fwaloha:2",
        "ebaloha:3",
        "tdma:2+qaloha:0.1",
        "tdma:3+qaloha:0.6",
    ),
    "fairness-qaloha-0.8": ("qaloha:0.8",),
}
for _size in range(1, len(QALOHA_SWEEP) + 1):
    TASK_SETS[f"qaloha-size-{_size}"] = tuple(f"qaloha:{q}" for q in QALOHA_SWEEP[:_size])
    TASK_SETS[f"tdma-size-{_size}"] = tuple(f"tdma:{x}" for x in TDMA_SWEEP[:_size])

DYNAMIC_SCHEDULES: Dict[str, Tuple[Tuple[int, str], ...]] = {
    "dynamic-4": (
        (0, "tdma:4"),
        (2000, "tdma:2+qaloha:0.1"),
        (4000, "tdma:3+qaloha:0.2"),
        (6000, "fwaloha:2"),
    ),
}
DYNAMIC_SLOTS = {"dynamic-4": 8000}

DEFAULT_TRAIN_PRESET = "trainset-8"
DEFAULT_TEST_PRESET = "testset-6"
DEFAULT_DYNAMIC_PRESET = "dynamic-4"


def preset_names() -> List[str]:
    return sorted([*TASK_SETS, *DYNAMIC_SCHEDULES])


def resolve_tasks(name: str, nu: Optional[float] = None) -> List[TaskSpec]:
    """Task set registered under ``name``; ``nu`` overrides every fairness factor."""
    if name in DYNAMIC_SCHEDULES:
        return [TaskSpec.from_string(text, nu=0.0 if nu is None else nu) for _, text in DYNAMIC_SCHEDULES[name]]
    if name not in TASK_SETS:
        raise UnknownPresetError(f"Unknown preset {name!r}", details={"known": preset_names()})
    return [TaskSpec.from_string(text, nu=0.0 if nu is None else nu) for text in TASK_SETS[name]]


def resolve_dynamic(name: str, nu: Optional[float] = None) -> Tuple[List[DynamicSegment], int]:
    """Segments of a change schedule and its total slot count."""
    if name not in DYNAMIC_SCHEDULES:
        raise UnknownPresetError(
            f"Unknown change schedule {name!r}",
            details={"known": sorted(DYNAMIC_SCHEDULES)},
        )
    segments = [
        DynamicSegment(start, TaskSpec.from_string(text, nu=0.0 if nu is None else nu))
        for start, text in DYNAMIC_SCHEDULES[name]
    ]
    return segments, DYNAMIC_SLOTS[name]
