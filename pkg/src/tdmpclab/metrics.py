"""Append-only run metrics with a versioned CSV schema.

Floats are serialized with repr() so that identical runs produce bitwise
identical files, and parsed back without loss.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .exceptions import ParseError

SCHEMA = "tdmpclab.metrics.v1"


@dataclass
class MetricsRow:
    env_step: int
    episode_return: float
    model_loss: float
    consistency: float
    reward_ce: float
    value_ce: float
    policy_loss: float
    q_mean: float
    entropy: float
    log_mu: float
    beta_eff: float
    s_q: float
    v_hat: float
    v_true: float
    ratio: float
    eval_return: float


COLUMNS = tuple(f.name for f in fields(MetricsRow))


def header_lines() -> list[str]:
    return [f"# schema={SCHEMA}", ",".join(COLUMNS)]


def format_row(row: MetricsRow) -> str:
    parts = []
    for f in fields(MetricsRow):
        value = getattr(row, f.name)
        parts.append(str(value) if f.type == "int" else repr(float(value)))
    return ",".join(parts)


class MetricsWriter:
    """Writes header on open, then one flushed line per row."""

    def __init__(self, path: str, append: bool = False):
        self.path = path
        mode = "a" if append else "w"
        self._fh = open(path, mode, encoding="utf-8")
        # An appended-to file that is actually empty still needs its header.
        if not append or self._fh.tell() == 0:
            for line in header_lines():
                self._fh.write(line + "\n")
            self._fh.flush()

    def write(self, row: MetricsRow) -> None:
        self._fh.write(format_row(row) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: str) -> list[MetricsRow]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"# schema={SCHEMA}":
        raise ParseError(
            f"{path}: line 1: expected schema header '# schema={SCHEMA}'"
        )
    if len(lines) < 2 or lines[1] != ",".join(COLUMNS):
        raise ParseError(f"{path}: line 2: column header mismatch")
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(COLUMNS):
            raise ParseError(
                f"{path}: line {lineno}: expected {len(COLUMNS)} fields, "
                f"got {len(parts)}"
            )
        try:
            rows.append(MetricsRow(
                env_step=int(parts[0]),
                **{name: float(value)
                   for name, value in zip(COLUMNS[1:], parts[1:])},
            ))
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    return rows
