"""Debounced command decisions over a sliding window of recognised gestures.

Each command's discriminant is the fraction of window frames whose gesture
maps to it. A command is confirmed once its fraction reaches `tau`.
Durative commands stay latched until another command (or idleness) is
confirmed; instantaneous commands fire once and re-arm only after the
window's plurality moves off them.
"""
from __future__ import annotations

import re
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path

NO_HAND = "no-hand"
IDLE = None

DURATIVE = "durative"
INSTANT = "instant"


@dataclass(frozen=True)
class CommandBinding:
    gesture: str
    command: str
    kind: str = DURATIVE
    payload: str = ""

    def __post_init__(self):
        if self.kind not in (DURATIVE, INSTANT):
            raise ValueError(f"unknown command kind {self.kind!r}")


class Bindings(dict):
    """gesture label -> CommandBinding"""

    def command_of(self, gesture):
        b = self.get(gesture)
        return b.command if b is not None else None

    def kind_of(self, command) -> str:
        for b in self.values():
            if b.command == command:
                return b.kind
        raise KeyError(command)

    def commands(self) -> list:
        seen = []
        for b in self.values():
            if b.command not in seen:
                seen.append(b.command)
        return seen


_LINE = re.compile(r"^\s*(?P<g>[^=#]+?)\s*=\s*(?P<c>\S+)\s*(?:\((?P<k>\w+)\))?\s*(?P<p>.*)$")


def parse_bindings(text: str) -> Bindings:
    """Lines like ``Palm-Tight = mouse.move (durative)``; '#' starts a comment."""
    out = Bindings()
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ValueError(f"bindings line {n}: cannot parse {raw!r}")
        g = m.group("g")
        if g in out:
            raise ValueError(f"bindings line {n}: gesture {g!r} bound twice")
        kind = (m.group("k") or DURATIVE).lower()
        kind = {"instantaneous": INSTANT}.get(kind, kind)
        out[g] = CommandBinding(g, m.group("c"), kind, m.group("p").strip())
    return out


def load_bindings(path) -> Bindings:
    return parse_bindings(Path(path).read_text())


def discriminant(window, command, bindings: Bindings) -> float:
    """Fraction of window frames whose gesture maps to `command`."""
    if len(window) == 0:
        raise ValueError("empty gesture window")
    hits = sum(1 for g in window if bindings.command_of(g) == command)
    return hits / len(window)


@dataclass(frozen=True)
class CommandDecision:
    command: str | None
    confidence: float
    latched: bool = False


@dataclass
class ResponderConfig:
    window: int = 10
    tau: float = 0.7

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")


@dataclass(frozen=True)
class CommandEvent:
    type: str          # activate | release | fire
    command: str
    gesture: str | None
    confidence: float


def decide(window, bindings: Bindings, cfg: ResponderConfig,
           current: CommandDecision | None = None) -> CommandDecision:
    """Pure decision for one window given the previous decision."""
    current = current or CommandDecision(IDLE, 0.0)
    scores = {c: discriminant(window, c, bindings) for c in bindings.commands()}
    if scores:
        top = max(scores.values())
        leaders = [c for c, f in scores.items() if f == top]
        if current.command in leaders:
            best = current.command
        elif len(leaders) == 1:
            best = leaders[0]
        else:
            best = None
        if best is not None and top >= cfg.tau:
            return CommandDecision(best, top, bindings.kind_of(best) == DURATIVE)
    if current.command is not None and current.latched:
        idle = sum(1 for g in window if bindings.command_of(g) is None) / len(window)
        if idle < cfg.tau:
            return CommandDecision(current.command,
                                   scores.get(current.command, 0.0), True)
    return CommandDecision(IDLE, 0.0)


class Responder:
    """Sliding-window state machine. The window starts full of no-hand."""

    def __init__(self, bindings: Bindings, cfg: ResponderConfig | None = None):
        self.bindings = bindings
        self.cfg = cfg or ResponderConfig()
        self.window = deque([NO_HAND] * self.cfg.window, maxlen=self.cfg.window)
        self.decision = CommandDecision(IDLE, 0.0)
        self.fired = None   # instant command waiting to be re-armed

    def _plurality_command(self):
        counts = Counter(self.bindings.command_of(g) for g in self.window)
        top = max(counts.values())
        leaders = [c for c, n in counts.items() if n == top]
        return leaders[0] if len(leaders) == 1 else IDLE

    def step(self, gesture: str | None) -> list[CommandEvent]:
        self.window.append(gesture if gesture is not None else NO_HAND)
        prev = self.decision
        new = decide(self.window, self.bindings, self.cfg, prev)
        events = []
        if self.fired is not None and self._plurality_command() != self.fired:
            self.fired = None
        gesture_now = self.window[-1]

        prev_durative = prev.command if prev.latched else None
        new_durative = new.command if new.latched else None
        if prev_durative is not None and prev_durative != new_durative:
            events.append(CommandEvent("release", prev_durative, gesture_now, new.confidence))
        if new_durative is not None and new_durative != prev_durative:
            events.append(CommandEvent("activate", new_durative, gesture_now, new.confidence))
        if new.command is not None and not new.latched:
            if self.fired != new.command and prev.command != new.command:
                events.append(CommandEvent("fire", new.command, gesture_now, new.confidence))
                self.fired = new.command
        self.decision = new
        return events


def replay(labels, bindings: Bindings, cfg: ResponderConfig | None = None):
    """Run a label stream; returns [(frame_index, event), ...]."""
    r = Responder(bindings, cfg)
    out = []
    for i, g in enumerate(labels):
        out.extend((i, e) for e in r.step(g))
    return out
