"""Transcribes the two LaTeX generator-input tables (face swapping, ID mixing)
into the routing fixtures used by the acceptance tests.

Usage: python3 scripts/transcribe_routing_tables.py <tables.md> crates/core/tests/fixtures
"""
import re
import sys
from pathlib import Path

ROW = re.compile(
    r"^\s*(\d+) & \$(\d+) \\times (\d+)\$ & (\w+) & \$s_\{?\d+\}?\^\{(\w+)\}\$ & ([^&]+?) & (.+?)\s*\\\\"
)
MAP = re.compile(r"m_(\d)\^\{(\d+) \\times \d+\}")
ROLE = {"ID-irrelevant": "target", "ID": "source", "Global ID": "global", "Local ID": "local"}
KIND = {"conv": "Conv", "convup": "ConvUp", "torgb": "ToRGB"}


def table_rows(text, label):
    start = text.index(label)
    end = text.index(r"\end{tabular}", start)
    for line in text[start:end].splitlines():
        m = ROW.match(line)
        if not m:
            continue
        idx, res, _, kind, _, ctype, maps = m.groups()
        mm = MAP.search(maps)
        map_col = f"m{mm.group(1)}@{mm.group(2)} target" if mm else "-"
        yield f"{idx} {res}x{res} {KIND[kind.lower()]} {ROLE[ctype.strip()]} {map_col}"


def main():
    text = Path(sys.argv[1]).read_text()
    out = Path(sys.argv[2])
    for label, name in [
        ("table:inputs_face_swapping", "routing_face_swap_1024.txt"),
        ("table:inputs_id_mixing", "routing_id_mix_1024.txt"),
    ]:
        rows = list(table_rows(text, label))
        assert len(rows) == 26, (name, len(rows))
        (out / name).write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
