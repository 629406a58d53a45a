"""Flat key=value config files and their merge with command-line flags.

Config files are UTF-8 text with one ``key = value`` assignment per
line; ``#`` starts a comment (whole-line or trailing) and blank lines
are ignored.  Precedence is built-in defaults < config file < flags, so
experiments can be recorded in a file and overridden per run.  Keys not
in the active subcommand's schema are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

__all__ = ["Opt", "parse_config_file", "merge_config"]


@dataclass(frozen=True)
class Opt:
    """One config key: name (snake_case), type, default, and help text."""

    key: str
    typ: type
    default: object
    help: str
    required: bool = False


_BOOL_WORDS = {
    "true": True, "1": True, "yes": True, "on": True,
    "false": False, "0": False, "no": False, "off": False,
}


def _cast(opt: Opt, raw: str):
    if opt.typ is bool:
        word = raw.strip().lower()
        if word not in _BOOL_WORDS:
            raise ConfigError(f"config key {opt.key!r}: expected a boolean, got {raw!r}")
        return _BOOL_WORDS[word]
    try:
        return opt.typ(raw)
    except ValueError as exc:
        raise ConfigError(
            f"config key {opt.key!r}: expected {opt.typ.__name__}, got {raw!r}"
        ) from exc


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines into a string-to-string dict."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read config file ({exc})") from exc
    values: dict = {}
    for ln_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{p}:{ln_no}: expected 'key = value', got {line.strip()!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{p}:{ln_no}: empty key")
        values[key] = value
    return values


def merge_config(opts: list, args, config_path) -> dict:
    """Resolve option values: defaults, then config file, then flags.

    ``args`` is the parsed argparse namespace whose attributes are None
    when the flag was not given.  Raises ConfigError for unknown config
    keys, bad casts, or missing required values.
    """
    by_key = {o.key: o for o in opts}
    values = {o.key: o.default for o in opts}

    if config_path is not None:
        raw = parse_config_file(config_path)
        unknown = sorted(set(raw) - set(by_key))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key, text in raw.items():
            values[key] = _cast(by_key[key], text)

    for opt in opts:
        given = getattr(args, opt.key, None)
        if given is not None:
            values[opt.key] = given

    missing = sorted(o.key for o in opts if o.required and values[o.key] is None)
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise ConfigError(f"missing required option(s): {flags}")
    return values
