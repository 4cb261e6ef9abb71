"""Flat ``key = value`` run configuration files.

One setting per line, ``#`` starts a comment, blank lines are ignored. Keys
use the long flag name with dashes or underscores (``rho-p`` and ``rho_p``
are the same key). Values stay strings here; the caller converts them with
the type of the matching command-line option.
"""


class ConfigError(ValueError):
    pass


def normalize_key(key):
    return key.strip().replace("-", "_")


def parse_config(text, source="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = normalize_key(key)
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from exc
    return parse_config(text, path)


def format_config(values):
    """Inverse of :func:`parse_config` for a flat dict (sorted keys)."""
    lines = []
    for k in sorted(values):
        v = values[k]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")
