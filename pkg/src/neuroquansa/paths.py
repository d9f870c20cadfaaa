from __future__ import annotations

import os
import re
import unicodedata
import uuid
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

from loguru import logger


_ILLEGAL_CHARS_RE = re.compile(r'[\x00-\x1F\x7F<>:\/\\\|\?\*"\s]+')
_MULTIPLE_UNDERSCORES_RE = re.compile(r"_+")

_MAX_SEGMENT_LEN = 255


def sanitize_segment(name: str) -> str:
    """Make a single path segment safe for result directory names.

    - Normalize Unicode to NFC
    - Replace illegal characters and whitespace with '_'
    - Trim trailing spaces/dots
    - Collapse multiple underscores
    - Enforce max length; never return an empty string
    """
    s = unicodedata.normalize("NFC", name)
    s = _ILLEGAL_CHARS_RE.sub("_", s)
    s = s.rstrip(" .")
    if not s:
        s = "_"
    s = _MULTIPLE_UNDERSCORES_RE.sub("_", s)
    return s[:_MAX_SEGMENT_LEN]


def format_value(x: float) -> str:
    """Compact, filesystem-safe rendering of a sweep value (1.25 -> '1.25', 5.0 -> '5')."""
    return f"{float(x):g}".replace("+", "")


def point_dir(run_dir: Path, label: str) -> Path:
    """Directory for one sweep point inside a run, e.g. out/phase-sweep/h_1.25."""
    d = Path(run_dir) / sanitize_segment(label)
    d.mkdir(parents=True, exist_ok=True)
    return d


def temp_out_path(final_path: Path) -> Path:
    """Return a unique temp file path in the same directory as final_path."""
    suffix = f".part-{os.getpid()}-{uuid.uuid4().hex[:8]}"
    return final_path.with_name(final_path.name + suffix)


@contextmanager
def atomic_output(final_path: Path) -> Iterator[Path]:
    """Yield a temp sibling path; rename it onto final_path when the block succeeds.

    The temp file is removed when the block raises, leaving any previous
    final_path untouched.
    """
    final_path = Path(final_path)
    final_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = temp_out_path(final_path)
    try:
        yield tmp
        os.replace(str(tmp), str(final_path))
    except BaseException:
        try:
            if tmp.exists():
                tmp.unlink()
        except Exception:
            pass
        raise
    logger.bind(action="write", status="ok").debug(f"wrote {final_path}")


def atomic_write_text(path: Path, content: str) -> Path:
    with atomic_output(path) as tmp:
        tmp.write_text(content, encoding="utf-8")
    return Path(path)

