"""Propagation condition and on-body device pose labels."""

from enum import IntEnum


class Condition(IntEnum):
    LOS = 0
    NLOS = 1


class Pose(IntEnum):
    LOS_HAND = 0
    NLOS_HAND = 1
    FRONT = 2
    BACK = 3

    @property
    def condition(self) -> Condition:
        return Condition.LOS if self in (Pose.LOS_HAND, Pose.FRONT) else Condition.NLOS

    @property
    def in_pocket(self) -> bool:
        return self in (Pose.FRONT, Pose.BACK)
