"""Versioned plain-text model checkpoints.

Layout::

    dagconv-checkpoint 1
    name DCN-T
    layer dcn f_in=1 f_out=16 activation=relu transposed=1 nodes=0,1,...
    param 100 1 16
    <row-major values on one line>
    head readout f_in=16 candidates=0,1,...
    param 16
    ...

Values are written with ``repr`` so a reload is bit-exact.  The graph itself is
not stored; pass the same :class:`~dagconv.dag.Dag` to :func:`load_checkpoint`.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dag import Dag
from .errors import ParameterError
from .models import DCNLayer, DenseLayer, FBGCNNLayer, NodeReadout, gcn_shift
from .nn import Network
from .signal import predecessor_masks, reachability, transitive_closure

FORMAT_VERSION = 1


def _fmt(v):
    if isinstance(v, (list, tuple)):
        return ",".join(str(int(x)) for x in v)
    return str(v)


def dumps(model: Network) -> str:
    out = [f"dagconv-checkpoint {FORMAT_VERSION}", f"name {model.name}"]
    for tag, mod in [("layer", m) for m in model.layers] + ([("head", model.head)] if model.head else []):
        cfg = mod.config()
        out.append(f"{tag} {cfg['kind']} " + " ".join(f"{k}={_fmt(v)}" for k, v in cfg.items() if k != "kind"))
        for p in mod.params:
            out.append("param " + " ".join(str(s) for s in p.shape))
            out.append(" ".join(repr(float(v)) for v in p.values.ravel()))
    return "\n".join(out) + "\n"


def save_checkpoint(model: Network, path) -> None:
    Path(path).write_text(dumps(model))


def _parse_kv(tokens):
    cfg = {}
    for tok in tokens:
        k, _, v = tok.partition("=")
        cfg[k] = v
    return cfg


def _ints(s):
    return [int(x) for x in s.split(",")] if s else []


def loads(text: str, dag: Dag) -> Network:
    lines = text.splitlines()
    if not lines or lines[0].split() != ["dagconv-checkpoint", str(FORMAT_VERSION)]:
        raise ParameterError("not a version-1 dagconv checkpoint")
    name = lines[1].split(maxsplit=1)[1] if len(lines) > 1 and lines[1].startswith("name") else "model"
    blocks = []
    i = 2
    while i < len(lines):
        head = lines[i].split()
        if not head:
            i += 1
            continue
        if head[0] not in ("layer", "head"):
            raise ParameterError(f"line {i + 1}: expected 'layer' or 'head', got {head[0]!r}")
        params = []
        i += 1
        while i < len(lines) and lines[i].startswith("param"):
            shape = tuple(int(s) for s in lines[i].split()[1:])
            vals = np.array(lines[i + 1].split(), dtype=float)
            params.append(vals.reshape(shape))
            i += 2
        blocks.append((head[0], head[1], _parse_kv(head[2:]), params))

    closure = reach = None
    layers, head_mod = [], None
    for tag, kind, cfg, params in blocks:
        if kind == "dcn":
            if closure is None:
                closure, reach = transitive_closure(dag), reachability(dag)
            shifts = predecessor_masks(dag, _ints(cfg["nodes"]), bool(int(cfg["transposed"])), reach=reach)
            mod = DCNLayer(closure, shifts, int(cfg["f_in"]), int(cfg["f_out"]), cfg["activation"], theta=params[0])
        elif kind == "fbgcnn":
            s = dag.adj if cfg["gso"] == "adjacency" else gcn_shift(dag.adj)
            if int(cfg.get("transposed", 0)):
                s = s.T
            mod = FBGCNNLayer(s, int(cfg["order"]), int(cfg["f_in"]), int(cfg["f_out"]), cfg["activation"],
                              theta=params[0], gso=cfg["gso"], transposed=bool(int(cfg.get("transposed", 0))))
        elif kind == "dense":
            mod = DenseLayer(int(cfg["n_in"]), int(cfg["f_in"]), int(cfg["n_out"]), int(cfg["f_out"]),
                             cfg["activation"], weight=params[0], bias=params[1])
        elif kind == "readout":
            mod = NodeReadout(int(cfg["f_in"]), _ints(cfg["candidates"]), weight=params[0], bias=params[1])
        else:
            raise ParameterError(f"unknown layer kind {kind!r}")
        if tag == "head":
            head_mod = mod
        else:
            layers.append(mod)
    return Network(layers, head_mod, name)


def load_checkpoint(path, dag: Dag) -> Network:
    return loads(Path(path).read_text(), dag)
