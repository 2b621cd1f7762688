"""Self-describing binary container for built indexes.

Layout (documented in docs/index_format.md):

    bytes 0..8    magic  b"LPANNIDX"
    bytes 8..16   header length H, little-endian uint64
    bytes 16..16+H  JSON header, UTF-8
    bytes 16+H..  raw data blocks, little-endian float64 / int64

The header carries the format version, build configuration, the computed
approximation bound, per-level metadata, and a block table mapping block
names to (offset, dtype, shape); offsets are relative to the end of the
header. Hash tables and grid dictionaries are not stored: they are derived
data and are rebuilt deterministically from the stored projections, shifts,
and vectors at load time, so a loaded index answers queries identically to
the in-memory one that was saved.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .base_schemes import CoarseScheme, L2Scheme
from .cover import Cluster, SparseCover
from .errors import UsageError
from .geometry import MazurMapSpec
from .recursive import (
    ApproxBound,
    ClusterChild,
    LadderLevel,
    LevelPlan,
    LpScheme,
    SchemeConfig,
    SchemeCopy,
    SchemeNode,
)

MAGIC = b"LPANNIDX"
FORMAT_VERSION = 1

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


class _BlockWriter:
    def __init__(self):
        self.blocks = []
        self.table = {}
        self.offset = 0
        self._seen = {}  # id(array) -> block name, dedupes shared arrays
        self._pin = []  # keeps arrays alive so ids in _seen stay unique

    def add(self, array: np.ndarray) -> str:
        key = id(array)
        if key in self._seen:
            return self._seen[key]
        self._pin.append(array)
        arr = np.asarray(array)
        code = "<i8" if arr.dtype.kind in "iu" else "<f8"
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        name = f"b{len(self.blocks)}"
        self.table[name] = {
            "offset": self.offset,
            "dtype": code,
            "shape": list(arr.shape),
        }
        raw = arr.tobytes()
        self.blocks.append(raw)
        self.offset += len(raw)
        self._seen[key] = name
        return name


def _encode_l2(s: L2Scheme, w: _BlockWriter) -> dict:
    return {
        "kind": "l2",
        "r": s.r,
        "delta_fail": s.delta_fail,
        "k": s.k,
        "w": s.w,
        "max_probe": s.max_probe,
        "c": s.c,
        "ids": w.add(s.ids),
        "vectors": w.add(s.vectors),
        "projections": w.add(s.projections),
        "offsets": w.add(s.offsets),
    }


def _encode_coarse(s: CoarseScheme, w: _BlockWriter) -> dict:
    return {
        "kind": "coarse",
        "p": s.p,
        "r": s.r,
        "c0": s.c0,
        "cell_side": s.cell_side,
        "ids": w.add(s.ids),
        "vectors": w.add(s.vectors),
        "shifts": w.add(s.shifts),
    }


def _encode_cover(cover: SparseCover, w: _BlockWriter) -> dict:
    centers = np.asarray([cl.center_id for cl in cover.clusters], dtype=np.int64)
    lengths = [len(cl.member_ids) for cl in cover.clusters]
    offsets = np.cumsum([0] + lengths).astype(np.int64)
    members = (
        np.concatenate([cl.member_ids for cl in cover.clusters])
        if cover.clusters
        else np.empty(0, dtype=np.int64)
    )
    ref_ids = np.asarray(sorted(cover.covering_ref), dtype=np.int64)
    ref_clusters = np.asarray([cover.covering_ref[int(i)] for i in ref_ids], dtype=np.int64)
    return {
        "beta": cover.beta,
        "radius": cover.radius,
        "diameter_bound": cover.diameter_bound,
        "sparsity": cover.sparsity,
        "centers": w.add(centers),
        "member_offsets": w.add(offsets),
        "members": w.add(members),
        "ref_ids": w.add(ref_ids),
        "ref_clusters": w.add(ref_clusters),
    }


def _encode_node(node: SchemeNode, w: _BlockWriter) -> dict:
    copies = []
    for copy in node.copies:
        base = [
            _encode_l2(b, w) if isinstance(b, L2Scheme) else _encode_coarse(b, w)
            for b in copy.base
        ]
        ladder = []
        for lvl in copy.ladder:
            children = []
            for ch in lvl.children:
                children.append(
                    {
                        "center_id": ch.center_id,
                        "mazur": None
                        if ch.mazur is None
                        else {
                            "p": ch.mazur.p,
                            "q": ch.mazur.q,
                            "c0": ch.mazur.c0,
                            "scale": ch.mazur.scale,
                        },
                        "copies": [_encode_node(sub, w) for sub in ch.copies],
                    }
                )
            ladder.append(
                {
                    "index": lvl.index,
                    "base_approx": lvl.base_approx,
                    "new_approx": lvl.new_approx,
                    "beta_eff": lvl.beta_eff,
                    "cover": _encode_cover(lvl.cover, w),
                    "children": children,
                }
            )
        copies.append({"base": base, "ladder": ladder})
    return {
        "t": node.t,
        "level_index": node.level_index,
        "r": node.r,
        "c_value": node.c_value,
        "k_nominal": node.k_nominal,
        "failure_budget": node.failure_budget,
        "ids": w.add(node.ids),
        "vectors": w.add(node.vectors),
        "copies": copies,
    }


def save_index(scheme: LpScheme, path: str) -> None:
    """Serialize a built index; the write is atomic (temp file + rename)."""
    w = _BlockWriter()
    scheme_tree = _encode_node(scheme.root, w)
    header = {
        "format_version": FORMAT_VERSION,
        "p": scheme.p,
        "r": scheme.r,
        "d": scheme.d,
        "n": scheme.n,
        "p_effective": scheme.p_effective,
        "holder_factor": scheme.holder_factor,
        "r_effective": scheme.r_effective,
        "config": {
            "p": scheme.config.p,
            "r": scheme.config.r,
            "delta": scheme.config.delta,
            "seed": scheme.config.seed,
            "base_copies": scheme.config.base_copies,
            "child_copies": scheme.config.child_copies,
        },
        "bound": scheme.bound.as_dict(),
        "id_alias": [[k, v] for k, v in sorted(scheme.id_alias.items())],
        "scheme": scheme_tree,
        "blocks": w.table,
    }
    payload = json.dumps(header, separators=(",", ":")).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".lpann-tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(payload)))
            f.write(payload)
            for raw in w.blocks:
                f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _BlockReader:
    def __init__(self, buf: bytes, table: dict, data_start: int):
        self.buf = buf
        self.table = table
        self.data_start = data_start

    def get(self, name: str) -> np.ndarray:
        meta = self.table[name]
        dtype = _DTYPES[meta["dtype"]]
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = self.data_start + meta["offset"]
        arr = np.frombuffer(self.buf, dtype=dtype, count=count, offset=start)
        return arr.reshape(shape).copy()


def _decode_base(meta: dict, r: _BlockReader):
    if meta["kind"] == "l2":
        return L2Scheme(
            ids=r.get(meta["ids"]),
            vectors=r.get(meta["vectors"]),
            r=meta["r"],
            delta_fail=meta["delta_fail"],
            k=meta["k"],
            w=meta["w"],
            projections=r.get(meta["projections"]),
            offsets=r.get(meta["offsets"]),
            max_probe=meta["max_probe"],
            c=meta["c"],
        )
    return CoarseScheme(
        ids=r.get(meta["ids"]),
        vectors=r.get(meta["vectors"]),
        p=meta["p"],
        r=meta["r"],
        c0=meta["c0"],
        cell_side=meta["cell_side"],
        shifts=r.get(meta["shifts"]),
    )


def _decode_cover(meta: dict, r: _BlockReader) -> SparseCover:
    centers = r.get(meta["centers"])
    offsets = r.get(meta["member_offsets"])
    members = r.get(meta["members"])
    clusters = [
        Cluster(
            member_ids=members[offsets[i]: offsets[i + 1]],
            center_id=int(centers[i]),
        )
        for i in range(len(centers))
    ]
    ref_ids = r.get(meta["ref_ids"])
    ref_clusters = r.get(meta["ref_clusters"])
    covering_ref = {int(a): int(b) for a, b in zip(ref_ids, ref_clusters)}
    return SparseCover(
        clusters=clusters,
        covering_ref=covering_ref,
        beta=meta["beta"],
        radius=meta["radius"],
        diameter_bound=meta["diameter_bound"],
        sparsity=meta["sparsity"],
    )


def _decode_node(meta: dict, r: _BlockReader) -> SchemeNode:
    node_vectors = r.get(meta["vectors"])
    id_arr = r.get(meta["ids"])
    id_to_local = {int(pid): i for i, pid in enumerate(id_arr)}
    copies = []
    for cmeta in meta["copies"]:
        base = [_decode_base(b, r) for b in cmeta["base"]]
        ladder = []
        for lmeta in cmeta["ladder"]:
            children = []
            for ch in lmeta["children"]:
                mz = ch["mazur"]
                children.append(
                    ClusterChild(
                        center_id=ch["center_id"],
                        center_vector=node_vectors[id_to_local[ch["center_id"]]],
                        mazur=None
                        if mz is None
                        else MazurMapSpec(p=mz["p"], q=mz["q"], c0=mz["c0"], scale=mz["scale"]),
                        copies=[_decode_node(sub, r) for sub in ch["copies"]],
                    )
                )
            ladder.append(
                LadderLevel(
                    index=lmeta["index"],
                    base_approx=lmeta["base_approx"],
                    new_approx=lmeta["new_approx"],
                    beta_eff=lmeta["beta_eff"],
                    cover=_decode_cover(lmeta["cover"], r),
                    children=children,
                )
            )
        copies.append(SchemeCopy(base=base, ladder=ladder))
    return SchemeNode(
        t=meta["t"],
        level_index=meta["level_index"],
        r=meta["r"],
        ids=id_arr,
        vectors=node_vectors,
        c_value=meta["c_value"],
        k_nominal=meta["k_nominal"],
        failure_budget=meta["failure_budget"],
        copies=copies,
        id_to_local=id_to_local,
    )


def load_index(path: str) -> LpScheme:
    """Load an index written by :func:`save_index`."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 16 or buf[:8] != MAGIC:
        raise UsageError(f"{path}: not an lpann index file")
    (header_len,) = struct.unpack("<Q", buf[8:16])
    if 16 + header_len > len(buf):
        raise UsageError(f"{path}: truncated header")
    try:
        header = json.loads(buf[16: 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise UsageError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise UsageError(
            f"{path}: unsupported format version {header.get('format_version')}"
        )

    reader = _BlockReader(buf, header["blocks"], 16 + header_len)
    bmeta = header["bound"]
    inf = float("inf")
    bound = ApproxBound(
        p=bmeta["p"],
        d=bmeta["d"],
        delta=bmeta["delta"],
        p_effective=bmeta["p_effective"],
        holder_factor=bmeta["holder_factor"],
        beta=bmeta["beta"] if bmeta["beta"] is not None else inf,
        beta_eff=bmeta["beta_eff"] if bmeta["beta_eff"] is not None else inf,
        levels=tuple(
            LevelPlan(
                t=lv["t"],
                initial_approx=lv["initial_approx"],
                k_nominal=lv["k"],
                ladder=tuple(lv["ladder"]),
            )
            for lv in bmeta["levels"]
        ),
        c_l2=bmeta["c_l2"],
        c_p=bmeta["c_p"],
        closed_form_literal=bmeta["closed_form_literal"],
    )
    cmeta = header["config"]
    return LpScheme(
        config=SchemeConfig(**cmeta),
        p=header["p"],
        d=header["d"],
        n=header["n"],
        p_effective=header["p_effective"],
        holder_factor=header["holder_factor"],
        r=header["r"],
        r_effective=header["r_effective"],
        bound=bound,
        root=_decode_node(header["scheme"], reader),
        id_alias={int(k): int(v) for k, v in header["id_alias"]},
    )
