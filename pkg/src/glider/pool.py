"""Expert pool registry and its on-disk format.

A pool file is one JSON document. Numeric arrays are stored as
``{"shape": [...], "blob": <base64 of little-endian float64 bytes>}`` so a
save/load round trip is bit-exact on any platform. The base model is stored
by its construction parameters and rebuilt deterministically on load.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CorruptFile, DimMismatch, DuplicateName, VersionMismatch
from .expert import ExpertModel, LoraModule, ToyBaseModel

FORMAT_VERSION = "glider-pool/1"
CREATED_BY = f"glider {__version__}"

_TOP_KEYS = {"version", "created_by", "base", "d_g", "experts"}
_BASE_KEYS = {"d", "m", "seed", "nonlinearity"}
_EXPERT_KEYS = {"name", "task_description", "global_vector", "modules"}
_MODULE_KEYS = {"layer", "rank", "lora_scaling", "A", "B", "gate"}


@dataclass
class ExpertPool:
    base: ToyBaseModel
    experts: list[ExpertModel] = field(default_factory=list)
    d_g: int | None = None
    version: str = FORMAT_VERSION
    created_by: str = CREATED_BY
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.experts)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.experts]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def add_expert(self, expert: ExpertModel) -> "ExpertPool":
        """Append ``expert``; existing indices are unchanged and routers go stale."""
        if expert.name in self.names:
            raise DuplicateName(f"expert {expert.name!r} already in pool")
        if len(expert.modules) != self.base.m:
            raise DimMismatch(f"expert {expert.name!r} has {len(expert.modules)} modules, base has {self.base.m}")
        for i, (mod, W) in enumerate(zip(expert.modules, self.base.weights)):
            if mod.A.shape[1] != W.shape[1] or mod.B.shape[0] != W.shape[0]:
                raise DimMismatch(f"expert {expert.name!r} module {i} does not fit a {W.shape} layer")
        if expert.global_vector is not None:
            dim = expert.global_vector.size
            if self.d_g is None:
                self.d_g = dim
            elif dim != self.d_g:
                raise DimMismatch(f"expert {expert.name!r} global vector has dim {dim}, pool uses {self.d_g}")
        self.experts.append(expert)
        self._cache.clear()
        return self

    @property
    def stale(self) -> bool:
        return "routers" not in self._cache

    def cached(self, key: str, builder):
        """Memoise ``builder(self)`` until the next mutation."""
        if key not in self._cache:
            self._cache[key] = builder(self)
        return self._cache[key]

    def routers(self):
        """(LocalRouter, GlobalRouter), rebuilt after any mutation."""
        from .router import build_routers

        return self.cached("routers", build_routers)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for e in self.experts:
            h.update(e.name.encode())
            h.update(e.task_description.encode())
            if e.global_vector is not None:
                h.update(np.ascontiguousarray(e.global_vector, dtype="<f8").tobytes())
            h.update(e.checksum().encode())
        return h.hexdigest()


def add_expert(pool: ExpertPool, expert: ExpertModel) -> ExpertPool:
    return pool.add_expert(expert)


# -- serialization ---------------------------------------------------------


def _encode(arr: np.ndarray | None):
    if arr is None:
        return None
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "blob": base64.b64encode(arr.tobytes()).decode("ascii")}


def pool_to_dict(pool: ExpertPool) -> dict:
    return {
        "version": pool.version,
        "created_by": pool.created_by,
        "base": {"d": pool.base.d, "m": pool.base.m, "seed": pool.base.seed, "nonlinearity": pool.base.nonlinearity},
        "d_g": pool.d_g,
        "experts": [
            {
                "name": e.name,
                "task_description": e.task_description,
                "global_vector": _encode(e.global_vector),
                "modules": [
                    {
                        "layer": i,
                        "rank": mod.rank,
                        "lora_scaling": mod.lora_scaling,
                        "A": _encode(mod.A),
                        "B": _encode(mod.B),
                        "gate": _encode(mod.gate),
                    }
                    for i, mod in enumerate(e.modules)
                ],
            }
            for e in pool.experts
        ],
    }


def dumps_pool(pool: ExpertPool) -> str:
    return json.dumps(pool_to_dict(pool), indent=1, sort_keys=True) + "\n"


def save_pool(pool: ExpertPool, path) -> None:
    Path(path).write_text(dumps_pool(pool), encoding="utf-8")


class _Decoder:
    def __init__(self, raw: bytes):
        self.raw = raw

    def offset_of(self, fragment: str) -> int | None:
        pos = self.raw.find(fragment.encode("utf-8")) if fragment else -1
        return pos if pos >= 0 else None

    def check_keys(self, obj, allowed: set, where: str) -> None:
        if not isinstance(obj, dict):
            raise CorruptFile(f"{where} must be an object")
        unknown = set(obj) - allowed
        if unknown:
            raise VersionMismatch(f"unknown field(s) {sorted(unknown)} in {where}; this reader understands {FORMAT_VERSION}")
        missing = allowed - set(obj)
        if missing:
            raise CorruptFile(f"missing field(s) {sorted(missing)} in {where}")

    def array(self, obj, where: str, ndim: int) -> np.ndarray | None:
        if obj is None:
            return None
        if not isinstance(obj, dict) or set(obj) != {"shape", "blob"}:
            raise CorruptFile(f"{where} must be {{shape, blob}}")
        shape = obj["shape"]
        blob = obj["blob"]
        if not isinstance(blob, str) or not isinstance(shape, list) or len(shape) != ndim:
            raise CorruptFile(f"{where} has a malformed shape or blob", self.offset_of(str(blob)))
        try:
            data = base64.b64decode(blob, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise CorruptFile(f"{where} blob is not valid base64", self.offset_of(blob)) from exc
        count = int(np.prod(shape)) if shape else 1
        if len(data) != 8 * count:
            raise CorruptFile(f"{where} blob holds {len(data)} bytes, shape {shape} needs {8 * count}", self.offset_of(blob))
        return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)


def loads_pool(raw: bytes | str) -> ExpertPool:
    if isinstance(raw, str):
        raw = raw.encode("utf-8")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptFile("pool file is not UTF-8", exc.start) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"pool file is not valid JSON: {exc.msg}", len(text[: exc.pos].encode("utf-8"))) from exc
    dec = _Decoder(raw)
    if not isinstance(doc, dict):
        raise CorruptFile("pool file must hold a JSON object", 0)
    if doc.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported pool version {doc.get('version')!r}; expected {FORMAT_VERSION!r}")
    dec.check_keys(doc, _TOP_KEYS, "pool")
    dec.check_keys(doc["base"], _BASE_KEYS, "base")
    b = doc["base"]
    if b["nonlinearity"] != "tanh":
        raise VersionMismatch(f"unsupported nonlinearity {b['nonlinearity']!r}")
    base = ToyBaseModel.build(int(b["d"]), int(b["m"]), int(b["seed"]))
    pool = ExpertPool(base=base, d_g=doc["d_g"], created_by=doc["created_by"])
    if not isinstance(doc["experts"], list):
        raise CorruptFile("experts must be a list")
    for n, e in enumerate(doc["experts"]):
        where = f"experts[{n}]"
        dec.check_keys(e, _EXPERT_KEYS, where)
        modules = []
        for j, mobj in enumerate(e["modules"]):
            mwhere = f"{where}.modules[{j}]"
            dec.check_keys(mobj, _MODULE_KEYS, mwhere)
            if mobj["layer"] != j:
                raise CorruptFile(f"{mwhere} has layer {mobj['layer']}, expected {j}")
            A = dec.array(mobj["A"], f"{mwhere}.A", 2)
            B = dec.array(mobj["B"], f"{mwhere}.B", 2)
            if A is None or B is None:
                raise CorruptFile(f"{mwhere} is missing A or B")
            mod = LoraModule(A, B, float(mobj["lora_scaling"]), dec.array(mobj["gate"], f"{mwhere}.gate", 1))
            if mod.rank != mobj["rank"]:
                raise CorruptFile(f"{mwhere} rank field {mobj['rank']} disagrees with A shape {A.shape}")
            modules.append(mod)
        expert = ExpertModel(
            name=e["name"],
            modules=modules,
            global_vector=dec.array(e["global_vector"], f"{where}.global_vector", 1),
            task_description=e["task_description"],
        )
        pool.add_expert(expert)
    return pool


def load_pool(path) -> ExpertPool:
    return loads_pool(Path(path).read_bytes())
