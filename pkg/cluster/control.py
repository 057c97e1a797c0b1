"""Operator commands, one per line: ``resize <n>``, ``pause``, ``resume``, ``stop``."""

from __future__ import annotations

from dataclasses import dataclass

from django.core.exceptions import ValidationError

COMMANDS = ("resize", "pause", "resume", "stop")


@dataclass(frozen=True)
class ControlCommand:
    action: str
    value: int | None = None

    def __str__(self) -> str:
        return self.action if self.value is None else f"{self.action} {self.value}"


def parse_command(line: str) -> ControlCommand:
    parts = line.strip().split()
    if not parts:
        raise ValidationError("Empty control command.")
    action, args = parts[0].lower(), parts[1:]
    if action not in COMMANDS:
        raise ValidationError(f"Unknown control command '{action}'. Expected one of {', '.join(COMMANDS)}.")
    if action == "resize":
        if len(args) != 1 or not args[0].isdigit():
            raise ValidationError("Usage: resize <n> with a non-negative integer n.")
        return ControlCommand(action=action, value=int(args[0]))
    if args:
        raise ValidationError(f"'{action}' takes no arguments.")
    return ControlCommand(action=action)
