"""Binary PLY I/O for Gaussian splat models.

The on-disk layout follows the de-facto 3DGS convention: little-endian
float32 vertex properties x, y, z, f_dc_0..2 (color), opacity (logit),
scale_0..2 (log stddev per axis), rot_0..3 (quaternion w, x, y, z), plus
three extra f_feat_* properties carrying the descriptor channels. Files
from third-party trainers without f_feat_* load as featureless models;
their f_rest_* spherical-harmonic bands and normals are skipped.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit, logit

from gsalign.errors import PlyParseError
from gsalign.model import (GaussianModel, covariances_from_factors,
                           quats_canonical_sign)
from gsalign.sim3 import matrix_to_quat

_OPACITY_EPS = 1e-7          # logit clamp bound, keeps logits within ~±16.1
_EIGVAL_TIE_REL = 1e-6       # eigenvalues closer than this (rel.) share a basis

_SCALAR_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_WRITE_PROPS = ("x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
                "rot_3", "f_feat_0", "f_feat_1", "f_feat_2")


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

def _parse_header(raw: bytes, path: str) -> tuple[list[tuple[str, int, list]], int]:
    """Return ([(element_name, count, [(prop_name, dtype_code)...])], body_offset)."""
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise PlyParseError(f"{path}: not a PLY file (no header found, offset 0)")
    body = raw.index(b"\n", end) + 1
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements: list[tuple[str, int, list]] = []
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise PlyParseError(f"{path}: property before any element")
            if tok[1] == "list":
                elements[-1][2].append((tok[-1], None))
            else:
                code = _SCALAR_TYPES.get(tok[1])
                if code is None:
                    raise PlyParseError(f"{path}: unsupported property type {tok[1]!r}")
                elements[-1][2].append((tok[-1], code))
    if fmt != "binary_little_endian":
        raise PlyParseError(f"{path}: only binary little-endian PLY is supported "
                            f"(format {fmt!r})")
    return elements, body


def read_ply(path: str | os.PathLike) -> GaussianModel:
    """Load a Gaussian model from a binary little-endian 3DGS PLY file.

    Opacity is decoded through the sigmoid and the covariance is rebuilt
    as R diag(exp(scale))^2 R^T from the stored quaternion and log-scales.
    Unknown extra properties (normals, f_rest_*) are ignored.
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    elements, offset = _parse_header(raw, path)

    vertex = None
    for name, count, props in elements:
        if name == "vertex":
            vertex = (count, props)
            break
        # Skip over earlier fixed-size elements; list properties have
        # data-dependent size and cannot be skipped blindly.
        if any(code is None for _, code in props):
            raise PlyParseError(f"{path}: list property before vertex element")
        offset += count * sum(np.dtype(c).itemsize for _, c in props)
    if vertex is None:
        raise PlyParseError(f"{path}: no vertex element in header")
    count, props = vertex
    if count == 0:
        raise PlyParseError(f"{path}: empty model (vertex count is 0)")
    if any(code is None for _, code in props):
        raise PlyParseError(f"{path}: list property on vertex element")

    dtype = np.dtype([(n, "<" + c) for n, c in props])
    need = count * dtype.itemsize
    if len(raw) - offset < need:
        raise PlyParseError(f"{path}: truncated payload at byte offset "
                            f"{len(raw)} (need {offset + need})")
    rows = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)

    def cols(names: list[str]) -> NDArray[np.float64]:
        missing = [n for n in names if n not in dtype.names]
        if missing:
            raise PlyParseError(f"{path}: missing required properties {missing}")
        return np.stack([rows[n].astype(np.float64) for n in names], axis=1)

    positions = cols(["x", "y", "z"])
    colors = np.clip(cols(["f_dc_0", "f_dc_1", "f_dc_2"]), 0.0, 1.0)
    opacities = expit(rows["opacity"].astype(np.float64)) if "opacity" in dtype.names \
        else _fail(path, "opacity")
    log_scales = cols(["scale_0", "scale_1", "scale_2"])
    rot_quats = cols(["rot_0", "rot_1", "rot_2", "rot_3"])
    norms = np.linalg.norm(rot_quats, axis=1)
    if norms.min(initial=np.inf) < 1e-12:
        raise PlyParseError(f"{path}: zero-norm rotation quaternion")

    feat_names = ["f_feat_0", "f_feat_1", "f_feat_2"]
    features = None
    if all(n in dtype.names for n in feat_names):
        features = np.clip(cols(feat_names), 0.0, 1.0)

    return GaussianModel(
        positions=positions,
        covariances=covariances_from_factors(log_scales, rot_quats),
        opacities=opacities,
        colors_dc=colors,
        features=features,
        log_scales=log_scales,
        rot_quats=rot_quats)


def _fail(path: str, prop: str):
    raise PlyParseError(f"{path}: missing required properties ['{prop}']")


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def canonical_factors(covariances: NDArray[np.float64]) -> tuple:
    """Decompose (N, 3, 3) SPD covariances into (log_scales, quats).

    Eigenvalues are sorted descending. The eigenbasis of (near-)tied
    eigenvalues is arbitrary, so tied groups are re-spanned from fixed
    world axes to make the output deterministic; fully isotropic splats
    get the identity rotation.
    """
    cov = np.asarray(covariances, dtype=np.float64)
    w, V = np.linalg.eigh(0.5 * (cov + np.swapaxes(cov, 1, 2)))
    if w.size and w.min() <= 0.0:
        bad = int(np.argmin(w.min(axis=1)))
        raise ValueError(f"covariance {bad} is not positive definite "
                         f"(min eigenvalue {w.min():.3e})")
    w = w[:, ::-1]
    V = V[:, :, ::-1]

    band = _EIGVAL_TIE_REL * w[:, 0]
    tied = (w[:, :-1] - w[:, 1:]) <= band[:, None]
    for i in np.flatnonzero(tied.any(axis=1)):
        V[i] = _respan_tied_basis(V[i], tied[i])

    # Restrict to proper rotations so the quaternion is well defined.
    det = np.einsum("ni,ni->n", V[:, :, 0], np.cross(V[:, :, 1], V[:, :, 2], axis=1))
    V[det < 0, :, 2] *= -1.0

    quats = quats_canonical_sign(np.stack([matrix_to_quat(V[i]) for i in range(len(V))])
                                 if len(V) else np.zeros((0, 4)))
    return 0.5 * np.log(w), quats


def _respan_tied_basis(V: np.ndarray, tied: np.ndarray) -> np.ndarray:
    if tied.all():
        return np.eye(3)
    lo, hi = (0, 1) if tied[0] else (1, 2)
    other = 2 if tied[0] else 0
    # Deterministic in-plane basis: project the best-aligned world axis
    # onto the tied eigenplane, complete with the plane normal.
    n = V[:, other]
    P = np.eye(3) - np.outer(n, n)
    k = int(np.argmax(np.linalg.norm(P, axis=0)))
    u1 = P[:, k] / np.linalg.norm(P[:, k])
    u2 = np.cross(n, u1)
    out = V.copy()
    out[:, lo], out[:, hi] = u1, u2
    return out


def write_ply(model: GaussianModel, path: str | os.PathLike) -> None:
    """Write a model in the 3DGS binary PLY layout (plus feature channels).

    Output bytes are a deterministic function of the model. The covariance
    factorization carried by models that came from disk or the synthesizer
    is reused verbatim; raw covariances fall back to the canonical
    eigendecomposition.
    """
    if model.has_factors:
        log_scales, rot_quats = model.log_scales, model.rot_quats
    else:
        log_scales, rot_quats = canonical_factors(model.covariances)
    n = len(model)
    opa = np.clip(model.opacities, _OPACITY_EPS, 1.0 - _OPACITY_EPS)
    features = model.features if model.has_features else np.zeros((n, 3))

    out = np.empty(n, dtype=np.dtype([(p, "<f4") for p in _WRITE_PROPS]))
    for j, p in enumerate(("x", "y", "z")):
        out[p] = model.positions[:, j]
    for j in range(3):
        out[f"f_dc_{j}"] = model.colors_dc[:, j]
        out[f"scale_{j}"] = log_scales[:, j]
        out[f"f_feat_{j}"] = features[:, j]
    out["opacity"] = logit(opa)
    for j in range(4):
        out[f"rot_{j}"] = rot_quats[:, j]

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in _WRITE_PROPS]
    header.append("end_header")
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(out.tobytes())
    os.replace(tmp, os.fspath(path))
