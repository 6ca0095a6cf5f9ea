"""Token escaping shared by the line-oriented model artifacts.

Schema, ruleset and config files are whitespace-delimited text.  Any token
that may contain whitespace (field names, category values, n-grams, class
tokens) goes through :func:`escape_token` on the way out and
:func:`unescape_token` on the way in, so round-trips are byte-exact.
"""
from __future__ import annotations

_FORWARD = {"\\": "\\\\", " ": "\\s", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_BACKWARD = {"\\": "\\", "s": " ", "t": "\t", "n": "\n", "r": "\r"}

# Marker for the empty token, which would otherwise vanish between delimiters.
_EMPTY = "\\e"


def escape_token(s: str) -> str:
    if s == "":
        return _EMPTY
    return "".join(_FORWARD.get(c, c) for c in s)


def split_lines(text: str) -> list[str]:
    """Split a serialized artifact into lines on '\\n' only.

    str.splitlines() also breaks on \\v, \\f, \\x85, \\u2028 and friends,
    which :func:`escape_token` deliberately leaves untouched; splitting on
    them would tear a token-bearing line in half.  The artifact grammar's
    only line boundary is '\\n' (read_text folds '\\r\\n' into it).
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def unescape_token(s: str) -> str:
    if s == _EMPTY:
        return ""
    out: list[str] = []
    i = 0
    while i < len(s):
        c = s[i]
        if c == "\\":
            if i + 1 >= len(s):
                raise ValueError(f"dangling escape at end of token {s!r}")
            try:
                out.append(_BACKWARD[s[i + 1]])
            except KeyError:
                raise ValueError(f"unknown escape {s[i:i + 2]!r}") from None
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)
