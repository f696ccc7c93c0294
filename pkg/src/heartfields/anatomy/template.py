"""Fixed-topology biventricular template.

The template is assembled from structured sheets on a shared azimuth grid:

* sheet A: LV endocardial bowl (truncated ellipsoid, apex rings, pole),
* sheet B: the LV epicardial ellipsoid bowl. Outside the RV sector (and
  above the RV apex row) it is true epicardium; inside the sector below
  the RV apex it is the septal RV endocardium, which in this family
  coincides with the LV epicardial locus,
* sheet C: RV free-wall epicardium, sheet B radially offset by the
  crescent bulge plus the RV wall thickness (both windows vanish at the
  sector tips and at the RV apex row, so C stitches onto B),
* sheet D: RV endocardial free wall (bulge only),
* basal ring bands E spanning the wall tops in the truncation plane, plus
  the mitral center vertex used as the fan apex of the flat base caps.

Per-vertex ventricular coordinates are functions of the grid alone, so
every generated shape carries the identical coordinate tuple at each
vertex index. Closed compartment surfaces (heart exterior, LV epicardial
volume, LV cavity, RV cavity) are provided as separate face arrays over
the same vertex indices for containment and volume queries.
"""

from dataclasses import dataclass, field

import numpy as np

SURFACE_TAGS = ("lv_endo", "rv_endo", "epi", "base_ring")
TAG_LV_ENDO, TAG_RV_ENDO, TAG_EPI, TAG_BASE_RING = range(4)

# fraction of the LV endo apex height where the shared trunk rows stop and
# per-sheet apex cap rows take over
_TRUNK_TOP = 0.88


@dataclass
class TemplateSpec:
    """Resolution knobs. ``n_phi`` must be a multiple of 16 so the RV
    sector tips land exactly on grid columns."""

    n_phi: int = 32
    n_rows: int = 25
    k_rv: int = 18
    n_apex_endo: int = 7
    n_apex_epi: int = 8
    rings_lv: int = 3
    rings_rv: int = 2

    def __post_init__(self):
        if self.n_phi % 16:
            raise ValueError("n_phi must be a multiple of 16")
        if not 1 <= self.k_rv < self.n_rows:
            raise ValueError("k_rv must lie strictly inside the trunk rows")


@dataclass
class TemplateTopology:
    spec: TemplateSpec
    uvc: np.ndarray  # (V, 4)
    surface_tag: np.ndarray  # (V,) int8 indices into SURFACE_TAGS
    faces: np.ndarray  # anatomical surface faces (no cap fans)
    face_group: np.ndarray  # per-face tag index, same legend as vertices
    compartments: dict  # name -> (F, 3) closed oriented face arrays
    transmural_pairs: np.ndarray  # (P, 2) endo/epi vertex index pairs
    blocks: dict = field(default_factory=dict)  # name -> index array

    @property
    def vertex_count(self):
        return self.uvc.shape[0]

    def vertex_labels(self):
        """Anatomical label per vertex by the adjacent-compartment rule:
        endocardial vertices take their blood pool, everything else takes
        the myocardium of its ventricle."""
        tag = self.surface_tag
        u1 = self.uvc[:, 0]
        labels = np.where(u1 < 0.5, 3, 4)  # LVM / RVM
        labels = np.where(tag == TAG_LV_ENDO, 1, labels)  # LV
        labels = np.where(tag == TAG_RV_ENDO, 2, labels)  # RV
        return labels.astype(np.int8)


def _band_faces(matrix, wrap):
    """Triangulate a (rows, cols) vertex-index matrix; consecutive rows are
    joined by quads, columns optionally wrap. Degenerate triangles (repeated
    indices, as happens along stitched seams) are dropped."""
    m = np.asarray(matrix)
    rows, cols = m.shape
    ncol = cols if wrap else cols - 1
    faces = []
    for r in range(rows - 1):
        for c in range(ncol):
            c2 = (c + 1) % cols
            v00, v01 = m[r, c], m[r, c2]
            v10, v11 = m[r + 1, c], m[r + 1, c2]
            faces.append((v00, v01, v11))
            faces.append((v00, v11, v10))
    return _drop_degenerate(np.array(faces, dtype=np.int64).reshape(-1, 3))


def _fan(ring, apex, downward=False):
    ring = np.asarray(ring)
    n = len(ring)
    faces = []
    for c in range(n):
        a, b = ring[c], ring[(c + 1) % n]
        faces.append((b, a, apex) if downward else (a, b, apex))
    return _drop_degenerate(np.array(faces, dtype=np.int64))


def _drop_degenerate(faces):
    if faces.size == 0:
        return faces.reshape(0, 3)
    ok = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 0] != faces[:, 2])
    )
    return faces[ok]


def _lv_rotational(phi, phi_ant, phi_post, half_width):
    """Rotational coordinate on LV surfaces: 0 at the posterior junction,
    2/3 at the anterior junction around the free wall, rising to 1 across
    the septum from anterior to posterior."""
    phi = np.asarray(phi, dtype=np.float64)
    septal = (phi > phi_ant) & (phi < phi_post)
    u = np.empty_like(phi)
    u[septal] = 2.0 / 3.0 + (phi[septal] - phi_ant) / (2.0 * half_width) / 3.0
    x = np.mod(phi[~septal] - phi_post, 2.0 * np.pi)
    u[~septal] = (2.0 / 3.0) * x / (2.0 * np.pi - 2.0 * half_width)
    return u


def _rv_rotational(phi, phi_ant, phi_post, half_width):
    """Counter-rotating free-wall coordinate on RV surfaces: 0 at the
    posterior junction, 2/3 at the anterior junction."""
    return (2.0 / 3.0) * (phi_post - np.asarray(phi)) / (2.0 * half_width)


def _ring_rotational(phi):
    return 1.0 + 0.5 * np.mod(phi, 2.0 * np.pi) / (2.0 * np.pi)


class _Grid:
    """Shared azimuth/row bookkeeping derived from a TemplateSpec."""

    def __init__(self, spec):
        self.spec = spec
        nphi = spec.n_phi
        self.sector = 3 * nphi // 16  # tip offset in columns
        mid = nphi // 2
        self.jl, self.jh = mid - self.sector, mid + self.sector
        self.interior = np.arange(self.jl + 1, self.jh)
        self.n_int = self.interior.size
        self.phi = 2.0 * np.pi * np.arange(nphi) / nphi
        self.dphi = 2.0 * np.pi / nphi
        self.half_width = self.sector * self.dphi
        self.phi_ant = np.pi - self.half_width
        self.phi_post = np.pi + self.half_width
        self.in_sector = np.zeros(nphi, dtype=bool)
        self.in_sector[self.interior] = True

    def blocks(self):
        spec = self.spec
        counts = {
            "A_trunk": spec.n_rows * spec.n_phi,
            "A_apex": spec.n_apex_endo * spec.n_phi,
            "A_pole": 1,
            "B_trunk": spec.n_rows * spec.n_phi,
            "B_apex": spec.n_apex_epi * spec.n_phi,
            "B_pole": 1,
            "C": spec.k_rv * self.n_int,
            "D": spec.k_rv * self.n_int,
            "E_lv": spec.rings_lv * spec.n_phi,
            "E_rv": spec.rings_rv * self.n_int,
            "M_c": 1,
        }
        blocks, off = {}, 0
        for name, n in counts.items():
            blocks[name] = np.arange(off, off + n)
            off += n
        return blocks, off


def assign_uvc_tags(spec, blocks, total):
    """Per-vertex ventricular coordinate 4-tuples and surface tags.

    Coordinates are functions of the parametric grid alone (never of shape
    size parameters), which is what makes them identical across every
    generated shape.
    """
    g = _Grid(spec)
    nphi, nrows, krv = spec.n_phi, spec.n_rows, spec.k_rv
    na_a, na_b = spec.n_apex_endo, spec.n_apex_epi
    a_trunk = blocks["A_trunk"].reshape(nrows, nphi)
    a_apex = blocks["A_apex"].reshape(na_a, nphi)
    a_pole = int(blocks["A_pole"][0])
    b_trunk = blocks["B_trunk"].reshape(nrows, nphi)
    b_apex = blocks["B_apex"].reshape(na_b, nphi)
    b_pole = int(blocks["B_pole"][0])
    c_grid = blocks["C"].reshape(krv, g.n_int)
    d_grid = blocks["D"].reshape(krv, g.n_int)
    e_lv = blocks["E_lv"].reshape(spec.rings_lv, nphi)
    e_rv = blocks["E_rv"].reshape(spec.rings_rv, g.n_int)
    m_c = int(blocks["M_c"][0])

    uvc = np.zeros((total, 4))
    tag = np.zeros(total, dtype=np.int8)

    # sheet A: LV endocardium
    u3_lv = _lv_rotational(g.phi, g.phi_ant, g.phi_post, g.half_width)
    ladder_a = nrows + na_a  # base row has ladder index 0, pole has ladder_a
    for j in range(nrows):
        ids = a_trunk[j]
        uvc[ids, 1] = 1.0
        uvc[ids, 2] = u3_lv
        uvc[ids, 3] = 1.0 - j / ladder_a
        tag[ids] = TAG_LV_ENDO
    for i in range(na_a):
        ids = a_apex[i]
        uvc[ids, 1] = 1.0
        uvc[ids, 2] = u3_lv
        uvc[ids, 3] = 1.0 - (nrows + i) / ladder_a
        tag[ids] = TAG_LV_ENDO
    uvc[a_pole] = (0.0, 1.0, 0.0, 0.0)
    tag[a_pole] = TAG_LV_ENDO

    # sheet B: epicardium outside the RV domain, septal RV endocardium inside
    ladder_b = nrows + na_b
    for j in range(nrows):
        ids = b_trunk[j]
        septal = g.in_sector & (j < krv)
        uvc[ids, 0] = np.where(septal, 1.0, 0.0)
        uvc[ids, 1] = np.where(septal, 1.0, 0.0)
        uvc[ids, 2] = u3_lv
        uvc[ids, 3] = 1.0 - j / ladder_b
        tag[ids] = np.where(septal, TAG_RV_ENDO, TAG_EPI)
    for i in range(na_b):
        ids = b_apex[i]
        uvc[ids, 2] = u3_lv
        uvc[ids, 3] = 1.0 - (nrows + i) / ladder_b
        tag[ids] = TAG_EPI
    uvc[b_pole] = (0.0, 0.0, 0.0, 0.0)
    tag[b_pole] = TAG_EPI

    # sheets C and D: RV free wall (rows 0..krv-1, interior columns)
    u3_rv = _rv_rotational(g.phi[g.interior], g.phi_ant, g.phi_post, g.half_width)
    for j in range(krv):
        lam = (krv - j) / krv  # 1 at base, 0 at the RV apex row
        uvc[c_grid[j], 0] = 1.0
        uvc[c_grid[j], 2] = u3_rv
        uvc[c_grid[j], 3] = lam
        tag[c_grid[j]] = TAG_EPI
        uvc[d_grid[j], 0] = 1.0
        uvc[d_grid[j], 1] = 1.0
        uvc[d_grid[j], 2] = u3_rv
        uvc[d_grid[j], 3] = lam
        tag[d_grid[j]] = TAG_RV_ENDO

    # basal ring bands
    u3_ring = _ring_rotational(g.phi)
    for r in range(spec.rings_lv):
        rho = (r + 1) / (spec.rings_lv + 1)
        ids = e_lv[r]
        uvc[ids, 0] = np.where(g.in_sector & (rho > 0.5), 1.0, 0.0)
        uvc[ids, 1] = 1.0 - rho
        uvc[ids, 2] = u3_ring
        uvc[ids, 3] = 1.0 + 0.25 * rho
        tag[ids] = TAG_BASE_RING
    for r in range(spec.rings_rv):
        rho = (r + 1) / (spec.rings_rv + 1)
        ids = e_rv[r]
        uvc[ids, 0] = 1.0
        uvc[ids, 1] = 1.0 - rho
        uvc[ids, 2] = u3_ring[g.interior]
        uvc[ids, 3] = 1.25 + 0.25 * rho
        tag[ids] = TAG_BASE_RING
    uvc[m_c] = (0.0, 0.5, 1.0, 1.5)
    tag[m_c] = TAG_BASE_RING
    return uvc, tag


def assign_uvc(topology):
    """Recompute the per-vertex coordinate assignment for a built template
    (the same function of the grid that build_template applies)."""
    uvc, _ = assign_uvc_tags(topology.spec, topology.blocks, topology.vertex_count)
    return uvc


def build_template(spec=None):
    """Construct the template topology (indices, coordinates, tags, faces,
    compartments). Geometry is evaluated separately per shape."""
    spec = spec or TemplateSpec()
    nphi, nrows, krv = spec.n_phi, spec.n_rows, spec.k_rv
    na_a, na_b = spec.n_apex_endo, spec.n_apex_epi
    g = _Grid(spec)
    jl, jh, interior, n_int = g.jl, g.jh, g.interior, g.n_int

    blocks, nv = g.blocks()
    a_trunk = blocks["A_trunk"].reshape(nrows, nphi)
    a_apex = blocks["A_apex"].reshape(na_a, nphi)
    a_pole = int(blocks["A_pole"][0])
    b_trunk = blocks["B_trunk"].reshape(nrows, nphi)
    b_apex = blocks["B_apex"].reshape(na_b, nphi)
    b_pole = int(blocks["B_pole"][0])
    c_grid = blocks["C"].reshape(krv, n_int)
    d_grid = blocks["D"].reshape(krv, n_int)
    e_lv = blocks["E_lv"].reshape(spec.rings_lv, nphi)
    e_rv = blocks["E_rv"].reshape(spec.rings_rv, n_int)
    m_c = int(blocks["M_c"][0])
    in_sector = g.in_sector

    uvc, tag = assign_uvc_tags(spec, blocks, nv)

    # ---------------------------------------------------------------- faces
    def bowl(trunk, apex, pole):
        m = np.vstack([trunk, apex])
        return np.vstack([_band_faces(m, wrap=True), _fan(m[-1], pole)])

    faces_a = bowl(a_trunk, a_apex, a_pole)
    faces_b = bowl(b_trunk, b_apex, b_pole)

    # exterior: B with the sector rows below the RV apex replaced by C
    ext = np.vstack([b_trunk, b_apex]).copy()
    for j in range(krv):
        ext[j, interior] = c_grid[j]
    faces_ext = np.vstack([_band_faces(ext, wrap=True), _fan(ext[-1], b_pole)])

    # RV free wall patches share the tip columns and the apex row with B
    def sector_matrix(core):
        m = np.empty((krv + 1, n_int + 2), dtype=np.int64)
        m[:krv, 0] = b_trunk[:krv, jl]
        m[:krv, -1] = b_trunk[:krv, jh]
        m[:krv, 1:-1] = core
        m[krv] = b_trunk[krv, jl : jh + 1]
        return m

    c_mat = sector_matrix(c_grid)
    d_mat = sector_matrix(d_grid)
    faces_c = _band_faces(c_mat, wrap=False)
    faces_d = _band_faces(d_mat, wrap=False)

    # basal bands: endo rim -> rings -> epi rim (LV), and RV wall top
    e_lv_mat = np.vstack([a_trunk[0][None, :], e_lv, b_trunk[0][None, :]])
    faces_e_lv = _band_faces(e_lv_mat, wrap=True)
    e_rv_mat = np.vstack([d_mat[0][None, :]] + [
        np.concatenate([[b_trunk[0, jl]], row, [b_trunk[0, jh]]])[None, :] for row in e_rv
    ] + [c_mat[0][None, :]])
    faces_e_rv = _band_faces(e_rv_mat, wrap=False)

    faces = np.vstack([faces_a, faces_b, faces_c, faces_d, faces_e_lv, faces_e_rv])
    face_group = np.concatenate(
        [
            np.full(len(faces_a), TAG_LV_ENDO, dtype=np.int8),
            _majority_tag(faces_b, tag),
            np.full(len(faces_c), TAG_EPI, dtype=np.int8),
            np.full(len(faces_d), TAG_RV_ENDO, dtype=np.int8),
            np.full(len(faces_e_lv), TAG_BASE_RING, dtype=np.int8),
            np.full(len(faces_e_rv), TAG_BASE_RING, dtype=np.int8),
        ]
    )

    # ---------------------------------------------------------- compartments
    compartments = {
        "lv_cavity": np.vstack([faces_a, _fan(a_trunk[0], m_c, downward=True)]),
        "lv_epi_volume": np.vstack([faces_b, _fan(b_trunk[0], m_c, downward=True)]),
        "heart": np.vstack([faces_ext, _fan(ext[0], m_c, downward=True)]),
        "rv_cavity": np.vstack(
            [
                _band_faces(b_trunk[: krv + 1, jl : jh + 1], wrap=False)[:, ::-1],
                faces_d,
                _band_faces(np.vstack([b_trunk[0, jl : jh + 1][None, :], d_mat[0][None, :]]),
                            wrap=False),
            ]
        ),
    }

    # ------------------------------------------------------ transmural pairs
    # LV wall only: the septum has no epicardial partner (its outer face is
    # the septal RV endocardium) and the thin RV free wall is sampled at its
    # surface vertices rather than by interpolation
    pairs = []
    for j in range(nrows):
        for col in range(nphi):
            if in_sector[col] and j < krv:
                continue
            pairs.append((a_trunk[j, col], b_trunk[j, col]))
    pairs.append((a_pole, b_pole))
    pairs = np.array(pairs, dtype=np.int64)

    topo = TemplateTopology(
        spec=spec,
        uvc=uvc,
        surface_tag=tag,
        faces=faces,
        face_group=face_group,
        compartments=compartments,
        transmural_pairs=pairs,
        blocks=blocks,
    )
    _check_unique_uvc(topo)
    return topo


def _majority_tag(faces, tag):
    t = tag[faces]  # (F, 3)
    out = np.where(
        (t[:, 1] == t[:, 2]) & (t[:, 0] != t[:, 1]), t[:, 1], t[:, 0]
    )
    return out.astype(np.int8)


def _check_unique_uvc(topo):
    seen = {tuple(np.round(row, 12)) for row in topo.uvc}
    if len(seen) != topo.vertex_count:
        raise AssertionError(
            f"template coordinates are not unique: {topo.vertex_count - len(seen)} collisions"
        )


# ------------------------------------------------------------------ geometry


def evaluate_positions(topo, a, b, c, wall, rv_offset, rv_wall, trunc_frac):
    """Vertex positions (mm) in the canonical build frame for one shape.

    ``a, b, c`` are the LV endocardial semi-axes, ``wall`` the LV wall
    thickness, ``rv_offset`` the crescent bulge amplitude, ``rv_wall`` the
    RV free-wall thickness, and ``trunc_frac`` the basal truncation
    fraction of the endocardial long semi-axis.
    """
    spec = topo.spec
    nphi, nrows, krv = spec.n_phi, spec.n_rows, spec.k_rv
    blocks = topo.blocks
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    sector = 3 * nphi // 16
    mid = nphi // 2
    interior = np.arange(mid - sector + 1, mid + sector)
    dphi = 2.0 * np.pi / nphi
    half_width = sector * dphi

    z_base = -trunc_frac * c
    z_top = _TRUNK_TOP * c
    t = np.arange(nrows) / (nrows - 1)
    z_rows = z_base + t * (z_top - z_base)

    pos = np.zeros((topo.vertex_count, 3))
    cosp, sinp = np.cos(phi), np.sin(phi)

    # sheet A
    s_a = np.sqrt(np.maximum(0.0, 1.0 - (z_rows / c) ** 2))
    at = blocks["A_trunk"].reshape(nrows, nphi)
    pos[at, 0] = np.outer(a * s_a, cosp)
    pos[at, 1] = np.outer(b * s_a, sinp)
    pos[at, 2] = z_rows[:, None]
    theta_top_a = np.arccos(_TRUNK_TOP)
    fr = (spec.n_apex_endo - np.arange(spec.n_apex_endo)) / (spec.n_apex_endo + 1)
    theta = theta_top_a * fr
    aa = blocks["A_apex"].reshape(spec.n_apex_endo, nphi)
    pos[aa, 0] = np.outer(a * np.sin(theta), cosp)
    pos[aa, 1] = np.outer(b * np.sin(theta), sinp)
    pos[aa, 2] = (c * np.cos(theta))[:, None]
    pos[blocks["A_pole"][0]] = (0.0, 0.0, c)

    # sheet B
    ce = c + wall
    s_b = np.sqrt(np.maximum(0.0, 1.0 - (z_rows / ce) ** 2))
    bt = blocks["B_trunk"].reshape(nrows, nphi)
    pos[bt, 0] = np.outer((a + wall) * s_b, cosp)
    pos[bt, 1] = np.outer((b + wall) * s_b, sinp)
    pos[bt, 2] = z_rows[:, None]
    theta_top_b = np.arccos(_TRUNK_TOP * c / ce)
    fr = (spec.n_apex_epi - np.arange(spec.n_apex_epi)) / (spec.n_apex_epi + 1)
    theta = theta_top_b * fr
    ba = blocks["B_apex"].reshape(spec.n_apex_epi, nphi)
    pos[ba, 0] = np.outer((a + wall) * np.sin(theta), cosp)
    pos[ba, 1] = np.outer((b + wall) * np.sin(theta), sinp)
    pos[ba, 2] = (ce * np.cos(theta))[:, None]
    pos[blocks["B_pole"][0]] = (0.0, 0.0, ce)

    # RV sheets: radial offsets added to the epicardial ellipse cross-sections.
    # The cavity bulge tapers smoothly to the RV apex row; the wall keeps its
    # nominal thickness except for short stitch ramps onto sheet B (two rows
    # at the RV apex, two columns at the sector tips).
    lam = (krv - np.arange(krv)) / krv  # 1 at base, 0 at RV apex row
    taper = np.sqrt(np.maximum(0.0, 1.0 - (1.0 - lam) ** 2))
    wall_ramp_z = np.clip(lam * krv / 2.0, 0.0, 1.0)
    bulge_win = np.cos(np.pi * (phi[interior] - np.pi) / (2.0 * half_width))
    wall_win = np.clip((half_width - np.abs(phi[interior] - np.pi)) / (2.0 * dphi), 0.0, 1.0)
    cg = blocks["C"].reshape(krv, interior.size)
    dg = blocks["D"].reshape(krv, interior.size)
    for j in range(krv):
        ax, bx = (a + wall) * s_b[j], (b + wall) * s_b[j]
        bulge = rv_offset * taper[j] * bulge_win
        pos[dg[j], 0] = (ax + bulge) * cosp[interior]
        pos[dg[j], 1] = (bx + bulge) * sinp[interior]
        pos[dg[j], 2] = z_rows[j]
        outer = bulge + rv_wall * wall_ramp_z[j] * wall_win
        pos[cg[j], 0] = (ax + outer) * cosp[interior]
        pos[cg[j], 1] = (bx + outer) * sinp[interior]
        pos[cg[j], 2] = z_rows[j]

    # basal bands
    el = blocks["E_lv"].reshape(spec.rings_lv, nphi)
    for r in range(spec.rings_lv):
        rho = (r + 1) / (spec.rings_lv + 1)
        pos[el[r]] = (1.0 - rho) * pos[at[0]] + rho * pos[bt[0]]
    er = blocks["E_rv"].reshape(spec.rings_rv, interior.size)
    for r in range(spec.rings_rv):
        rho = (r + 1) / (spec.rings_rv + 1)
        pos[er[r]] = (1.0 - rho) * pos[dg[0]] + rho * pos[cg[0]]
    pos[blocks["M_c"][0]] = (0.0, 0.0, z_base)
    return pos
