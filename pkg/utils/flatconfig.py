"""Flat ``key=value`` text grammar shared by config files, manifests and saved architectures.

One pair per line, keys sorted on output, lists joined by commas. Lines starting with ``#``
and blank lines are ignored on input.
"""

from typing import Dict, List, Mapping, Optional, Union

FlatValue = Union[str, int, float, bool, None, List[Union[str, int, float]]]


def format_value(value: FlatValue) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def dumps(values: Mapping[str, FlatValue]) -> str:
    """Serialize a mapping into sorted ``key=value`` lines."""
    lines = []
    for key in sorted(values):
        if "=" in key or "\n" in key:
            raise ValueError(f"Invalid config key: {key!r}")
        text = format_value(values[key])
        if "\n" in text:
            raise ValueError(f"Value for {key!r} spans several lines")
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> Dict[str, str]:
    """Parse ``key=value`` lines into a dict of raw strings.

    Raises:
        ValueError: on a non-comment line without ``=``
    """
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"Line {number} is not key=value: {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def dumps_inline(values: Mapping[str, FlatValue], separator: str = ";") -> str:
    """Single-line form used where one record must fit on one line (hpo history)."""
    return separator.join(line for line in dumps(values).splitlines())


def loads_inline(text: str, separator: str = ";") -> Dict[str, str]:
    return loads("\n".join(text.split(separator)))


def load_file(path: str) -> Dict[str, str]:
    with open(path, "r", encoding="utf-8") as f:
        return loads(f.read())


def save_file(values: Mapping[str, FlatValue], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(values))


def split_list(text: Optional[str]) -> List[str]:
    if text is None or text == "":
        return []
    return [item.strip() for item in text.split(",")]


def merge(*layers: Optional[Mapping[str, str]]) -> Dict[str, str]:
    """Later layers override earlier ones; ``None`` layers are skipped."""
    merged: Dict[str, str] = {}
    for layer in layers:
        if layer:
            merged.update(layer)
    return merged


def unprefixed(values: Mapping[str, str], prefix: str) -> Dict[str, str]:
    head = prefix + "."
    return {key[len(head):]: value for key, value in values.items() if key.startswith(head)}
