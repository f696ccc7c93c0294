"""Binary checkpoint container for the two networks and the latent table.

Little-endian layout:

    magic       4 bytes   b"NIHC"
    version     u32       currently 1
    latent_dim  u32
    n_sections  u32
    section table, n_sections entries of (name: 8 bytes NUL-padded,
                                          offset: u64, size: u64)
    section payloads

Network sections ("segnet", "regnet") hold the four dims
(input/output/hidden/blocks) as u32 followed by the flat parameter vector
as float64 in layout order. "latents" holds (count u32, dim u32) plus the
code table; "latstats" holds the latent mean, covariance, and regularized
inverse; "scales" the input/output scaling constants; "opt*" sections the
Adam moments so training can resume; "meta" the epoch counter.
All floating payloads are float64 regardless of the in-memory compute dtype.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .netcore import ResidualMlp

MAGIC = b"NIHC"
VERSION = 1


@dataclass
class Checkpoint:
    seg_net: ResidualMlp
    reg_net: ResidualMlp
    latent_codes: np.ndarray  # (n_shapes, latent_dim)
    latent_mean: np.ndarray = None
    latent_cov: np.ndarray = None
    latent_cov_inv: np.ndarray = None
    scales: dict = field(default_factory=dict)
    opt: dict = field(default_factory=dict)  # name -> (m, v, step_count)
    epoch: int = 0

    @property
    def latent_dim(self):
        return int(self.latent_codes.shape[1])


def _net_payload(net):
    head = struct.pack(
        "<4I", net.input_dim, net.output_dim, net.hidden_dim, net.num_blocks
    )
    return head + np.ascontiguousarray(net.parameters, dtype="<f8").tobytes()


def _net_from_payload(buf):
    d_in, d_out, h, nb = struct.unpack_from("<4I", buf, 0)
    params = np.frombuffer(buf, dtype="<f8", offset=16).copy()
    return ResidualMlp(d_in, d_out, h, nb, params)


def _array_payload(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<2I", arr.shape[0], arr.shape[1] if arr.ndim == 2 else 1)
    return head + arr.tobytes()


def _array_from_payload(buf):
    rows, cols = struct.unpack_from("<2I", buf, 0)
    return np.frombuffer(buf, dtype="<f8", offset=8).copy().reshape(rows, cols)


def save_checkpoint(path, ckpt):
    """Write a checkpoint atomically (temp file then rename)."""
    sections = [
        (b"segnet", _net_payload(ckpt.seg_net)),
        (b"regnet", _net_payload(ckpt.reg_net)),
        (b"latents", _array_payload(np.atleast_2d(ckpt.latent_codes))),
    ]
    if ckpt.latent_mean is not None:
        stats = np.concatenate(
            [
                ckpt.latent_mean.ravel(),
                ckpt.latent_cov.ravel(),
                ckpt.latent_cov_inv.ravel(),
            ]
        )
        sections.append((b"latstats", struct.pack("<I", ckpt.latent_mean.size) + stats.tobytes()))
    if ckpt.scales:
        keys = sorted(ckpt.scales)
        blob = b"".join(
            struct.pack("<16sd", k.encode().ljust(16, b"\0"), float(ckpt.scales[k]))
            for k in keys
        )
        sections.append((b"scales", blob))
    for name, (m, v, t) in sorted(ckpt.opt.items()):
        blob = struct.pack("<2I", m.size, int(t))
        blob += np.ascontiguousarray(m, dtype="<f8").tobytes()
        blob += np.ascontiguousarray(v, dtype="<f8").tobytes()
        sections.append((("opt_" + name).encode()[:8], blob))
    sections.append((b"meta", struct.pack("<I", int(ckpt.epoch))))

    header = MAGIC + struct.pack("<3I", VERSION, ckpt.latent_dim, len(sections))
    table_size = len(sections) * (8 + 8 + 8)
    offset = len(header) + table_size
    table = b""
    for name, payload in sections:
        table += struct.pack("<8sQQ", name.ljust(8, b"\0"), offset, len(payload))
        offset += len(payload)

    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(table)
        for _, payload in sections:
            f.write(payload)
    os.replace(tmp, str(path))


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, latent_dim, n_sections = struct.unpack_from("<3I", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    sections = {}
    pos = 16
    for _ in range(n_sections):
        name, offset, size = struct.unpack_from("<8sQQ", blob, pos)
        pos += 24
        sections[name.rstrip(b"\0").decode()] = blob[offset : offset + size]

    ckpt = Checkpoint(
        seg_net=_net_from_payload(sections["segnet"]),
        reg_net=_net_from_payload(sections["regnet"]),
        latent_codes=np.atleast_2d(_array_from_payload(sections["latents"])),
    )
    if "latstats" in sections:
        buf = sections["latstats"]
        (dim,) = struct.unpack_from("<I", buf, 0)
        data = np.frombuffer(buf, dtype="<f8", offset=4)
        ckpt.latent_mean = data[:dim].copy()
        ckpt.latent_cov = data[dim : dim + dim * dim].reshape(dim, dim).copy()
        ckpt.latent_cov_inv = data[dim + dim * dim :].reshape(dim, dim).copy()
    if "scales" in sections:
        buf = sections["scales"]
        for i in range(len(buf) // 24):
            key, value = struct.unpack_from("<16sd", buf, i * 24)
            ckpt.scales[key.rstrip(b"\0").decode()] = value
    for name, buf in sections.items():
        if name.startswith("opt_"):
            size, t = struct.unpack_from("<2I", buf, 0)
            data = np.frombuffer(buf, dtype="<f8", offset=8)
            ckpt.opt[name[4:]] = (data[:size].copy(), data[size:].copy(), t)
    if "meta" in sections:
        (ckpt.epoch,) = struct.unpack_from("<I", sections["meta"], 0)
    if ckpt.latent_codes.shape[1] != latent_dim:
        raise ValueError(
            f"{path}: latent table dim {ckpt.latent_codes.shape[1]} "
            f"!= header dim {latent_dim}"
        )
    return ckpt
