"""Shape family: parameter sampling, instance generation, averaging."""

from dataclasses import dataclass, replace

import numpy as np

from . import template as tpl
from .frames import apply_frame, cardiac_frame


@dataclass
class ShapeParams:
    """Size parameters of one cohort member (all lengths in mm)."""

    lv_semi_axes: tuple = (26.0, 24.0, 52.0)  # endocardial a, b, c
    lv_wall_thickness: float = 10.0
    rv_crescent_offset: float = 20.0
    rv_wall_thickness: float = 3.0
    base_truncation_fraction: float = 0.55
    global_scale: float = 1.0
    seed: int = 0

    def validate(self):
        a, b, c = self.lv_semi_axes
        for name, v in [
            ("semi-axis a", a),
            ("semi-axis b", b),
            ("semi-axis c", c),
            ("lv_wall_thickness", self.lv_wall_thickness),
            ("rv_crescent_offset", self.rv_crescent_offset),
            ("rv_wall_thickness", self.rv_wall_thickness),
            ("global_scale", self.global_scale),
        ]:
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if not 0.2 <= self.base_truncation_fraction <= 0.8:
            raise ValueError("base_truncation_fraction outside [0.2, 0.8]")
        if self.lv_wall_thickness >= min(a, b, c):
            raise ValueError("degenerate shape: wall thickness >= LV semi-axis")
        return self


DEFAULT_RANGES = {
    "a": (23.0, 29.0),
    "b_over_a": (0.85, 1.0),
    "c": (46.0, 58.0),
    "wall": (8.0, 12.0),
    "rv_offset": (17.0, 23.0),
    "trunc": (0.5, 0.6),
    "scale": (0.9, 1.1),
}


def default_params(seed=0):
    return ShapeParams(seed=seed).validate()


def sample_params(seed, ranges=None):
    """Draw one cohort member's parameters; deterministic per seed."""
    r = dict(DEFAULT_RANGES, **(ranges or {}))
    rng = np.random.default_rng(seed)

    def u(key):
        lo, hi = r[key]
        return float(rng.uniform(lo, hi))

    a = u("a")
    return ShapeParams(
        lv_semi_axes=(a, a * u("b_over_a"), u("c")),
        lv_wall_thickness=u("wall"),
        rv_crescent_offset=u("rv_offset"),
        rv_wall_thickness=3.0,
        base_truncation_fraction=u("trunc"),
        global_scale=u("scale"),
        seed=seed,
    ).validate()


@dataclass
class InstanceMesh:
    """One cohort member: template-corresponding vertex positions (mm,
    cardiac coordinates) plus valve/apex landmarks."""

    topology: tpl.TemplateTopology
    vertices: np.ndarray
    landmarks: dict  # {"mvc", "tvc", "lva"} -> (3,) arrays
    params: ShapeParams = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.shape != (self.topology.vertex_count, 3):
            raise ValueError(
                f"vertex array shape {self.vertices.shape} does not match the "
                f"template ({self.topology.vertex_count} vertices)"
            )
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("non-finite vertex positions")

    def compartment(self, name):
        """(vertices, faces) of one closed compartment surface."""
        return self.vertices, self.topology.compartments[name]

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def long_axis_length(self):
        return float(np.linalg.norm(self.landmarks["lva"] - self.landmarks["mvc"]))


def landmarks_from_vertices(topology, positions):
    """Landmark triple read off template vertex positions: mitral center
    vertex, LV endocardial apex pole, and the RV cavity base-rim centroid
    as the tricuspid stand-in."""
    blocks = topology.blocks
    spec = topology.spec
    sector = 3 * spec.n_phi // 16
    mid = spec.n_phi // 2
    b_row0 = blocks["B_trunk"].reshape(spec.n_rows, spec.n_phi)[0]
    d_row0 = blocks["D"].reshape(spec.k_rv, 2 * sector - 1)[0]
    rim = np.concatenate([b_row0[mid - sector : mid + sector + 1], d_row0])
    return {
        "mvc": positions[blocks["M_c"][0]].copy(),
        "tvc": positions[rim].mean(axis=0),
        "lva": positions[blocks["A_pole"][0]].copy(),
    }


def generate_shape(topology, params, seed=None):
    """Evaluate one shape of the family and canonicalize it to its own
    cardiac frame. ``seed`` overrides ``params.seed`` (kept for provenance
    only; the geometry is a deterministic function of the parameters)."""
    params = replace(params, seed=params.seed if seed is None else seed)
    params.validate()
    a, b, c = params.lv_semi_axes
    pos = tpl.evaluate_positions(
        topology,
        a,
        b,
        c,
        params.lv_wall_thickness,
        params.rv_crescent_offset,
        params.rv_wall_thickness,
        params.base_truncation_fraction,
    )
    pos = pos * params.global_scale

    lm = landmarks_from_vertices(topology, pos)
    mvc, tvc, lva = lm["mvc"], lm["tvc"], lm["lva"]
    frame = cardiac_frame(mvc, tvc, lva)
    verts = apply_frame(frame, pos)
    landmarks = {
        "mvc": apply_frame(frame, mvc),
        "tvc": apply_frame(frame, tvc),
        "lva": apply_frame(frame, lva),
    }
    return InstanceMesh(topology, verts, landmarks, params)


def mean_shape(meshes):
    """Vertex-wise arithmetic mean of frame-aligned, template-corresponding
    meshes; landmarks are averaged too."""
    meshes = list(meshes)
    if not meshes:
        raise ValueError("mean_shape of an empty cohort")
    topo = meshes[0].topology
    verts = np.mean([m.vertices for m in meshes], axis=0)
    landmarks = {
        k: np.mean([m.landmarks[k] for m in meshes], axis=0) for k in ("mvc", "tvc", "lva")
    }
    return InstanceMesh(topo, verts, landmarks, None)


def myocardial_interior_point(endo_vertex, epi_vertex, t):
    """Linear interpolation across a transmural pair.

    Each vertex is a (position, uvc) tuple; returns (position, uvc) with
    position = lerp(epi, endo, t), so the transmural coordinate comes out
    as t (epi end has u2 = 0, endo end u2 = 1).
    """
    if not 0.0 < t < 1.0:
        raise ValueError(f"t must lie strictly inside (0, 1), got {t}")
    endo_pos, endo_uvc = endo_vertex
    epi_pos, epi_uvc = epi_vertex
    pos = (1.0 - t) * np.asarray(epi_pos, dtype=np.float64) + t * np.asarray(
        endo_pos, dtype=np.float64
    )
    uvc = (1.0 - t) * np.asarray(epi_uvc, dtype=np.float64) + t * np.asarray(
        endo_uvc, dtype=np.float64
    )
    return pos, uvc


def interior_points_batch(mesh, pair_indices, ts):
    """Vectorized :func:`myocardial_interior_point` over template pairs."""
    topo = mesh.topology
    pairs = topo.transmural_pairs[pair_indices]
    ts = np.asarray(ts, dtype=np.float64)[:, None]
    endo_pos, epi_pos = mesh.vertices[pairs[:, 0]], mesh.vertices[pairs[:, 1]]
    endo_uvc, epi_uvc = topo.uvc[pairs[:, 0]], topo.uvc[pairs[:, 1]]
    pos = (1.0 - ts) * epi_pos + ts * endo_pos
    uvc = (1.0 - ts) * epi_uvc + ts * endo_uvc
    return pos, uvc
