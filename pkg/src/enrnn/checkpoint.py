"""Single-file checkpoints.

Layout (all integers little-endian)::

    b"ENRCKPT\\0"          magic
    u32                    format version
    u64 + bytes            canonical JSON header (config, flags, optimizer scalars, RNG state)
    u64                    tensor count
    per tensor, sorted by name:
        u16 + bytes        name (utf-8)
        u8                 ndim
        u64 * ndim         shape
        f64 * size         row-major payload
    32 bytes               SHA-256 of everything above
"""

import hashlib
import json
import struct

import numpy as np

from .errors import CheckpointError
from .lstm import LstmParams
from .net import EnrnnParams
from .optim import make_optimizer
from .params import CayleyOrthogonalBlock, EigenNormBlock
from .training import RunMetrics, RunResult, TrainConfig

MAGIC = b"ENRCKPT\x00"
VERSION = 1


def _collect(result):
    params, opt = result.params, result.optimizer
    tensors = {f"param/{k}": v for k, v in params.tensors().items()}
    header = {
        "config": result.config.to_dict(),
        "iteration": int(result.iteration),
        "rng_state": result.rng_state,
        "error": result.error,
        "optimizer": {
            "kind": opt.kind,
            "hyper": opt.hyperparameters(),
            "steps": {k: int(st["t"]) for k, st in sorted(opt.state.items())},
        },
    }
    if isinstance(params, EnrnnParams):
        tensors["param/D"] = params.W_L.D
        header["model"] = {
            "kind": "enrnn",
            "activation": params.activation,
            "epsilon": params.W_S.epsilon,
            "active": params.W_S.active,
            "coupled": params.coupled,
        }
    else:
        header["model"] = {"kind": "lstm"}
    for key, st in opt.state.items():
        for slot, arr in st.items():
            if slot != "t":
                tensors[f"opt/{key}/{slot}"] = arr
    return header, tensors


def to_bytes(result):
    header, tensors = _collect(result)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(hbytes)), hbytes,
             struct.pack("<Q", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nb = name.encode()
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape), arr.tobytes()]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, result):
    data = to_bytes(result)
    with open(path, "wb") as fh:
        fh.write(data)


def _parse(data):
    if len(data) < len(MAGIC) + 32 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch; file is corrupt")
    off = len(MAGIC)
    try:
        (version,) = struct.unpack_from("<I", body, off)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off += 4
        (hlen,) = struct.unpack_from("<Q", body, off)
        off += 8
        header = json.loads(body[off:off + hlen])
        off += hlen
        (count,) = struct.unpack_from("<Q", body, off)
        off += 8
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<B", body, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}Q", body, off)
            off += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(body, dtype="<f8", count=size, offset=off).reshape(shape)
            tensors[name] = arr.astype(np.float64)
            off += 8 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if off != len(body):
        raise CheckpointError("trailing bytes after tensor table")
    return header, tensors


def _rebuild_params(header, tensors):
    p = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    model = header["model"]
    if model["kind"] == "lstm":
        return LstmParams(*(p[k] for k in LstmParams.names))
    D = p["D"]
    q = D.shape[0]
    A = np.zeros((q, q))
    A[np.triu_indices(q, 1)] = p["A"]
    A = A - A.T
    W_L = CayleyOrthogonalBlock(A, D)
    W_S = EigenNormBlock(p["T"], model["epsilon"], model["active"])
    return EnrnnParams(
        p["U_L"], p["U_S"], W_L, W_S, p.get("W_C"), p["b_L"], p["b_S"],
        p["V_L"], p["V_S"], p["c"], model["activation"],
    )


def from_bytes(data):
    header, tensors = _parse(data)
    params = _rebuild_params(header, tensors)
    oh = header["optimizer"]
    opt = make_optimizer(oh["kind"], **oh["hyper"])
    for key, t in oh["steps"].items():
        st = {"t": t}
        prefix = f"opt/{key}/"
        for name, arr in tensors.items():
            if name.startswith(prefix):
                st[name[len(prefix):]] = arr
        opt.state[key] = st
    config = TrainConfig.from_dict(header["config"])
    return RunResult(config, params, opt, RunMetrics(), header["iteration"], header["rng_state"], header["error"])


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
