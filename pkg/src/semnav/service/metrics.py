"""Episode accounting: success rate, path efficiency, collisions, length.

Path efficiency (SPL) weights each success by shortest over realized
length, so detours count against the score but failures zero it outright.
The shortest length is the straight-line start-to-target distance, a
consistent lower bound across scenarios.
"""

import csv
import io
from dataclasses import dataclass, fields


class EmptyEpisodeSet(ValueError):
    """Aggregating zero episodes is a caller bug, not a zero score."""


CSV_COLUMNS = (
    "task", "trial", "seed", "updates", "success", "shortest_m",
    "traveled_m", "collisions", "sim_time_s", "status", "reason",
)


@dataclass(frozen=True)
class EpisodeRow:
    task: str
    trial: int
    seed: int
    updates: bool
    success: bool
    shortest_m: float
    traveled_m: float
    collisions: int
    sim_time_s: float
    status: str
    reason: str = ""

    def __post_init__(self):
        if self.shortest_m <= 0.0:
            raise ValueError("shortest_m must be positive")
        if self.traveled_m < 0.0 or self.collisions < 0 or self.sim_time_s < 0.0:
            raise ValueError("traveled_m, collisions and sim_time_s must be non-negative")


@dataclass(frozen=True)
class MetricsRecord:
    sr: float
    spl: float
    cc: float
    tl: float
    episodes: tuple

    def to_dict(self) -> dict:
        return {"sr": self.sr, "spl": self.spl, "cc": self.cc, "tl": self.tl,
                "episodes": len(self.episodes)}


def compute_metrics(episodes) -> MetricsRecord:
    rows = tuple(episodes)
    if not rows:
        raise EmptyEpisodeSet("no episodes to aggregate")
    n = len(rows)
    sr = sum(1.0 for r in rows if r.success) / n
    spl = sum(r.shortest_m / max(r.traveled_m, r.shortest_m)
              for r in rows if r.success) / n
    cc = sum(r.collisions for r in rows) / n
    wins = [r.traveled_m for r in rows if r.success]
    tl = sum(wins) / len(wins) if wins else 0.0
    return MetricsRecord(sr, spl, cc, tl, rows)


def _cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def rows_to_csv(rows) -> str:
    """Fixed column order, LF line endings, six decimals on lengths."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([_cell(getattr(r, name)) for name in CSV_COLUMNS])
    return buf.getvalue()


def rows_from_csv(text: str) -> tuple:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected header {header}")
    types = {f.name: f.type if isinstance(f.type, str) else f.type.__name__
             for f in fields(EpisodeRow)}
    out = []
    for raw in reader:
        kwargs = {}
        for name, cell in zip(CSV_COLUMNS, raw):
            kind = types[name]
            if kind == "bool":
                kwargs[name] = cell == "1"
            elif kind == "int":
                kwargs[name] = int(cell)
            elif kind == "float":
                kwargs[name] = float(cell)
            else:
                kwargs[name] = cell
        out.append(EpisodeRow(**kwargs))
    return tuple(out)
