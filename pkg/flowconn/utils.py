import csv
import io
from pathlib import Path

import click
import numpy as np

from flowconn import logger
from flowconn.exceptions import ConfigError, UnknownSpecError


def parse_spec(text: str) -> tuple[str, dict[str, str]]:
    """
    Split a `name:key=value,key=value` specification into its name and options.

    Vector-valued options use `;` between components, e.g.
    `loop:center=1;0;0,radius=0.1`.
    """
    if not isinstance(text, str):
        logger.error("Specification must be a string")
        raise TypeError("Specification must be a string")

    text = text.strip()
    if not text:
        logger.error("Empty specification provided")
        raise UnknownSpecError("Specification is empty")

    name, _, rest = text.partition(":")
    options: dict[str, str] = {}
    if rest:
        for item in rest.split(","):
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                logger.error(f"Malformed option '{item}' in specification '{text}'")
                raise UnknownSpecError(f"Malformed option '{item}' in '{text}'")
            options[key.strip()] = value.strip()
    return name.strip().lower(), options


def parse_float(value: str, field: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError) as e:
        logger.error(f"Field '{field}' is not a number: {value!r}")
        raise ConfigError(f"Field '{field}' must be a number, got {value!r}") from e


def parse_vector(text: str, field: str, sep: str | None = None) -> np.ndarray:
    """
    Parse `1,0,0` or `1;0;0` into a float vector. The separator is guessed
    when not given.
    """
    if not isinstance(text, str) or not text.strip():
        logger.error(f"Field '{field}' is empty")
        raise ConfigError(f"Field '{field}' must be a comma separated vector")

    if sep is None:
        sep = ";" if ";" in text else ","
    try:
        return np.array([float(part) for part in text.split(sep)], dtype=float)
    except ValueError as e:
        logger.error(f"Field '{field}' is not a numeric vector: {text!r}")
        raise ConfigError(f"Field '{field}' must be a numeric vector, got {text!r}") from e


def parse_ladder(text: str, field: str) -> list[float]:
    ladder = parse_vector(text, field).tolist()
    if not ladder or any(value <= 0 for value in ladder):
        logger.error(f"Field '{field}' must hold positive values: {text!r}")
        raise ConfigError(f"Field '{field}' must hold positive values")
    return ladder


def load_key_value_file(path: str | Path) -> dict[str, str]:
    """
    Read a flat `key=value` experiment file. Blank lines and `#` comments are
    skipped; keys are normalized to snake_case.
    """
    path = Path(path)
    logger.info(f"Loading experiment config from {path}")
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        logger.error(f"Cannot read config file {path}: {e}")
        raise ConfigError(f"Cannot read config file {path}: {e}") from e

    values: dict[str, str] = {}
    for number, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            logger.error(f"{path}:{number}: expected key=value, got {raw!r}")
            raise ConfigError(f"{path}:{number}: expected key=value")
        values[key.strip().replace("-", "_")] = value.strip()
    logger.debug(f"Read {len(values)} keys from {path}")
    return values


def rows_to_csv(columns: list[str], rows: list[dict]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: _format_cell(row[key]) for key in columns})
    return buffer.getvalue()


def _format_cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return value


def write_text(text: str, out: str | Path | None) -> None:
    """
    Write a report to `out`, or echo it to stdout when `out` is None.
    """
    if out is None:
        click.echo(text, nl=not text.endswith("\n"))
        return
    out = Path(out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        logger.info(f"Report written to {out}")
    except OSError as e:
        logger.error(f"Cannot write report to {out}: {e}")
        raise ConfigError(f"Cannot write report to {out}: {e}") from e
