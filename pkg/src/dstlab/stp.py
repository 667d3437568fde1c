"""Line-oriented STP instance files (SteinLib-style subset).

Recognized sections::

    SECTION Graph
    Nodes n
    Arcs m
    A tail head cost     (m lines, 1-based vertex ids)
    END
    SECTION Terminals
    Root r
    Terminals k
    T id                 (k lines)
    END
    EOF

Keywords are case-insensitive and unknown sections are skipped. Layered
instances add::

    SECTION Layers
    L value
    V id level           (one line per vertex)
    END
"""

from __future__ import annotations

from dstlab.graph import Digraph, DstInstance


class StpFormatError(ValueError):
    pass


def parse_stp(text: str) -> tuple[DstInstance, dict[int, int] | None]:
    """Parse an instance; returns ``(instance, layers)``.

    ``layers`` maps vertex id to level when a Layers section is present,
    else ``None``.
    """
    n = None
    arcs: list[tuple[int, int, float]] = []
    root = None
    terminals: list[int] = []
    num_layers = None
    layer_of: dict[int, int] = {}

    section = None
    known = {"graph", "terminals", "layers"}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        words = line.split()
        key = words[0].lower()
        if key == "section":
            if len(words) < 2:
                raise StpFormatError(f"line {lineno}: SECTION without a name")
            section = words[1].lower()
            continue
        if key == "end":
            section = None
            continue
        if key == "eof":
            break
        if section not in known:
            continue
        try:
            if section == "graph":
                if key == "nodes":
                    n = int(words[1])
                elif key == "arcs":
                    pass
                elif key == "a":
                    arcs.append((int(words[1]) - 1, int(words[2]) - 1, float(words[3])))
            elif section == "terminals":
                if key == "root":
                    root = int(words[1]) - 1
                elif key == "terminals":
                    pass
                elif key == "t":
                    terminals.append(int(words[1]) - 1)
            elif section == "layers":
                if key == "l":
                    num_layers = int(words[1])
                elif key == "v":
                    layer_of[int(words[1]) - 1] = int(words[2])
        except (IndexError, ValueError) as exc:
            raise StpFormatError(f"line {lineno}: cannot parse {line!r}") from exc

    if n is None:
        raise StpFormatError("missing Graph section with Nodes")
    if root is None:
        raise StpFormatError("missing Root")
    if not terminals:
        raise StpFormatError("missing terminals")
    inst = DstInstance.build(Digraph.from_edges(n, arcs), root, terminals)
    layers = layer_of if (layer_of or num_layers is not None) else None
    return inst, layers


def read_stp(path: str) -> tuple[DstInstance, dict[int, int] | None]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_stp(fh.read())


def write_stp(inst: DstInstance, layers: dict[int, int] | None = None) -> str:
    g = inst.graph
    lines = ["SECTION Graph", f"Nodes {g.n}", f"Arcs {g.m}"]
    for u, v, c in g.edges:
        lines.append(f"A {u + 1} {v + 1} {c!r}")
    lines.append("END")
    lines.append("SECTION Terminals")
    lines.append(f"Root {inst.root + 1}")
    lines.append(f"Terminals {inst.k}")
    for t in sorted(inst.terminals):
        lines.append(f"T {t + 1}")
    lines.append("END")
    if layers is not None:
        lines.append("SECTION Layers")
        lines.append(f"L {max(layers.values())}")
        for v in sorted(layers):
            lines.append(f"V {v + 1} {layers[v]}")
        lines.append("END")
    lines.append("EOF")
    return "\n".join(lines) + "\n"
