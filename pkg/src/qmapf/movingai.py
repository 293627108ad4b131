"""MovingAI ``.map`` / ``.scen`` reading and writing."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .gridworld import GridMap, Instance, Position

FREE_SYMBOLS = ".G"
BLOCKED_SYMBOLS = "@OT"


class FormatError(ValueError):
    pass


def parse_map(text: str) -> GridMap:
    lines = text.splitlines()
    header: dict[str, str] = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if line == "map":
            break
        key, _, value = line.partition(" ")
        if key not in ("type", "height", "width"):
            raise FormatError(f"line {i}: unexpected header line {line!r}")
        header[key] = value.strip()
    else:
        raise FormatError("missing 'map' line")
    for key in ("type", "height", "width"):
        if key not in header:
            raise FormatError(f"missing '{key}' header")
    try:
        height, width = int(header["height"]), int(header["width"])
    except ValueError as exc:
        raise FormatError(f"bad dimensions in header: {exc}") from None
    body = [ln.rstrip("\r\n") for ln in lines[i:]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != height:
        raise FormatError(f"header says height {height} but {len(body)} rows follow")
    cells = np.zeros((height, width), dtype=np.uint8)
    for r, row in enumerate(body):
        if len(row) != width:
            raise FormatError(f"row {r} has {len(row)} symbols, expected {width}")
        for c, ch in enumerate(row):
            if ch in BLOCKED_SYMBOLS:
                cells[r, c] = 1
            elif ch not in FREE_SYMBOLS:
                raise FormatError(f"row {r}, col {c}: unknown symbol {ch!r}")
    return GridMap(cells)


def serialize_map(grid: GridMap, kind: str = "octile") -> str:
    rows = grid.to_text()
    return f"type {kind}\nheight {grid.height}\nwidth {grid.width}\nmap\n" + "\n".join(rows) + "\n"


@dataclass(frozen=True)
class ScenEntry:
    bucket: int
    map_name: str
    width: int
    height: int
    start: Position  # (row, col)
    goal: Position
    optimal: float
    line: int = 0


def parse_scen_entries(text: str) -> list[ScenEntry]:
    entries = []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("version"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 9:
            raise FormatError(f"line {no}: expected 9 fields, got {len(parts)}")
        try:
            bucket, name = int(parts[0]), parts[1]
            w, h, sx, sy, gx, gy = (int(p) for p in parts[2:8])
            optimal = float(parts[8])
        except ValueError as exc:
            raise FormatError(f"line {no}: {exc}") from None
        # files store x (column) before y (row)
        entries.append(ScenEntry(bucket, name, w, h, (sy, sx), (gy, gx), optimal, no))
    return entries


def instance_from_entries(
    entries: Sequence[ScenEntry], grid: GridMap, max_steps: int = 256, name: str = ""
) -> Instance:
    used: dict[Position, int] = {}
    for e in entries:
        for what, p in (("start", e.start), ("goal", e.goal)):
            if not grid.is_free(p):
                raise FormatError(f"line {e.line}: {what} {p} is not a free cell")
            if p in used:
                raise FormatError(f"line {e.line}: {what} {p} duplicates a cell from line {used[p]}")
            used[p] = e.line
    return Instance(grid, tuple(e.start for e in entries), tuple(e.goal for e in entries), max_steps, name=name)


def parse_scen(text: str, grid: GridMap, m: int, max_steps: int = 256, name: str = "") -> Instance:
    """First ``m`` scenario entries as an m-agent instance."""
    entries = parse_scen_entries(text)
    if len(entries) < m:
        raise FormatError(f"scenario has {len(entries)} entries, {m} requested")
    return instance_from_entries(entries[:m], grid, max_steps, name)


def rotated_entries(entries: Sequence[ScenEntry], grid: GridMap, m: int, offset: int) -> list[ScenEntry]:
    """``m`` compatible entries in file order starting at ``offset`` (wrapping).

    Entries that are blocked or reuse a cell already taken are skipped.
    """
    picked: list[ScenEntry] = []
    used: set[Position] = set()
    n = len(entries)
    for k in range(n):
        e = entries[(offset + k) % n]
        if e.start == e.goal or not grid.is_free(e.start) or not grid.is_free(e.goal):
            continue
        if e.start in used or e.goal in used:
            continue
        picked.append(e)
        used.update((e.start, e.goal))
        if len(picked) == m:
            return picked
    raise FormatError(f"only {len(picked)} compatible scenario entries, {m} requested")


def serialize_scen(instance: Instance, map_name: str, optimal: Sequence[float] | None = None) -> str:
    grid = instance.grid
    lines = ["version 1"]
    for k, (s, g) in enumerate(zip(instance.starts, instance.goals)):
        opt = optimal[k] if optimal is not None else 0.0
        lines.append(
            "\t".join(
                str(x)
                for x in (0, map_name, grid.width, grid.height, s[1], s[0], g[1], g[0], f"{float(opt):.8f}")
            )
        )
    return "\n".join(lines) + "\n"
