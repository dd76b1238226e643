"""JSON-lines state snapshots.

The first line is a header ``{"format", "model", "params", "seed", ...}``;
every further line is one agent at one time step::

    {"t": 0, "id": 5, "type": "C2", "x": 3, "y": 9}                       # schelling
    {"t": 0, "id": 5, "type": "prey", "phase": "dead", "x": "off", "y": "off", "parent": null}

Optional extra keys (e.g. the ramification branch ``r``) are carried through.
"""

from __future__ import annotations

import json
from typing import IO, Iterable, Iterator

import numpy as np

from . import predprey, schelling
from .grid import OFF_GRID

FORMAT = "abmgdn-snapshot/1"


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def state_records(state, extra: dict | None = None) -> Iterator[dict]:
    extra = extra or {}
    if isinstance(state, schelling.SchellingState):
        for i in range(state.n_agents):
            yield {**extra, "t": state.t, "id": i, "type": schelling.COLORS[state.color[i]],
                   "x": int(state.pos[i, 0]), "y": int(state.pos[i, 1])}
    elif isinstance(state, predprey.PredPreyState):
        for i in range(state.n_agents):
            on = state.pos[i, 0] != OFF_GRID
            yield {**extra, "t": state.t, "id": i, "type": predprey.KINDS[state.kind[i]],
                   "phase": predprey.PHASES[state.phase[i]],
                   "x": int(state.pos[i, 0]) if on else "off",
                   "y": int(state.pos[i, 1]) if on else "off",
                   "parent": int(state.parent[i]) if state.parent[i] >= 0 else None}
    else:
        raise TypeError(f"unsupported state type {type(state).__name__}")


def write_header(fh: IO[str], model: str, params: dict, seed, **extra) -> None:
    fh.write(_dump({"format": FORMAT, "model": model, "params": params, "seed": seed, **extra}) + "\n")


def write_states(fh: IO[str], states: Iterable, extra: dict | None = None) -> None:
    for state in states:
        fh.write("".join(_dump(rec) + "\n" for rec in state_records(state, extra)))


def read_header(fh: IO[str]) -> dict:
    header = json.loads(fh.readline())
    if header.get("format") != FORMAT:
        raise ValueError(f"not a snapshot file (format={header.get('format')!r})")
    return header


def states_from_records(model: str, grid_size: int, records: Iterable[dict],
                        key: str | None = None) -> dict:
    """Group records by ``(t,)`` or ``(key, t)`` and rebuild states."""
    groups: dict = {}
    for rec in records:
        k = (rec[key], rec["t"]) if key else rec["t"]
        groups.setdefault(k, []).append(rec)
    return {k: _build(model, grid_size, recs) for k, recs in groups.items()}


def _coord(v) -> int:
    return OFF_GRID if v == "off" else int(v)


def _build(model: str, L: int, recs: list[dict]):
    recs = sorted(recs, key=lambda r: r["id"])
    if [r["id"] for r in recs] != list(range(len(recs))):
        raise ValueError("agent ids must be contiguous from 0")
    t = recs[0]["t"]
    pos = np.array([[_coord(r["x"]), _coord(r["y"])] for r in recs], dtype=np.int64)
    if model == "schelling":
        color = np.array([schelling.COLORS.index(r["type"]) for r in recs], dtype=np.int8)
        return schelling.SchellingState(L, color, pos, t)
    if model == "predprey":
        kind = np.array([predprey.KINDS.index(r["type"]) for r in recs], dtype=np.int8)
        phase = np.array([predprey.PHASES.index(r["phase"]) for r in recs], dtype=np.int8)
        parent = np.array([-1 if r["parent"] is None else r["parent"] for r in recs], dtype=np.int64)
        return predprey.PredPreyState(L, kind, phase, pos, parent, t)
    raise ValueError(f"unknown model {model!r}")


def read_snapshot(path) -> tuple[dict, list]:
    """Header plus the states of a plain (non-branched) snapshot, ordered by t."""
    with open(path) as fh:
        header = read_header(fh)
        records = [json.loads(line) for line in fh if line.strip()]
    L = header["params"]["grid_size"]
    states = states_from_records(header["model"], L, records)
    return header, [states[t] for t in sorted(states)]


def write_snapshot(path, model: str, params: dict, seed, states: Iterable, **extra) -> None:
    with open(path, "w") as fh:
        write_header(fh, model, params, seed, **extra)
        write_states(fh, states)
