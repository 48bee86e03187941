"""Structured-mesh P1 finite elements on a box domain.

The box is subdivided into cells, each cut into six tetrahedra along the
main diagonal (Kuhn/Freudenthal pattern), which is conforming and nested
under dyadic refinement.  Displacements carry three dofs per node
(node-major, dof = 3*node + comp); the transformation-strain field carries
five dofs per node in the orthonormal deviatoric basis of tensors.py
(dof = 5*node + comp), so all nodal norms are plain euclidean.

Quadrature policy: the quadratic energy terms are integrated exactly
(P1 integrands are polynomials), while the nonsmooth transformation and
dissipation densities are imposed nodally with lumped weights.  Loads are
sampled at nodes and integrated as elementwise-linear data, which is exact
against P1 test functions.

Mesh/field dump format (plain columnar text): a header line
"# smaevol-fields nodes=<n> tets=<m> fields=<name:width,...>", one line per
node with "x y z <field values...>", a line "# tets", then one line per
tetrahedron with its four node indices.
"""

import itertools
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .material import MaterialParams
from .tensors import DEV_BASIS

PLANES = ("x0", "x1", "y0", "y1", "z0", "z1")
_PERMS = list(itertools.permutations((0, 1, 2)))


class SingularFormError(Exception):
    """The energy form is not definite on the requested subspace."""


@dataclass
class BoxMesh:
    extents: np.ndarray          # (3,)
    n: np.ndarray                # subdivisions per axis
    nodes: np.ndarray            # (nn, 3)
    tets: np.ndarray             # (nt, 4), tet 6*cell + perm
    h: float                     # max edge length
    boundary: dict               # plane -> (ntri, 3) node triples

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def box_mesh(extents=(1.0, 1.0, 1.0), n=(2, 2, 2)) -> BoxMesh:
    extents = np.asarray(extents, dtype=float)
    n = np.asarray(n, dtype=int)
    if np.any(n < 1) or np.any(extents <= 0):
        raise ValueError("need positive extents and at least one cell per axis")
    nx, ny, nz = (int(k) for k in n)
    xs = [np.linspace(0, extents[a], n[a] + 1) for a in range(3)]
    I, J, K = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1),
                          indexing="ij")
    nid = lambda i, j, k: i + (nx + 1) * (j + (ny + 1) * k)
    nodes = np.stack([xs[0][I], xs[1][J], xs[2][K]], axis=-1)
    nodes = nodes.transpose(2, 1, 0, 3).reshape(-1, 3)  # node id order

    # cells appended with i fastest so tet id = 6 * (i + nx*(j + ny*k)) + perm,
    # matching the cell indexing used by locate()
    tets = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                base = np.array([i, j, k])
                for perm in _PERMS:
                    idx = [base.copy()]
                    cur = base.copy()
                    for axis in perm:
                        cur = cur.copy()
                        cur[axis] += 1
                        idx.append(cur)
                    tets.append([nid(*v) for v in idx])
    tets = np.array(tets, dtype=int)

    coords = nodes[tets]
    edges = coords[:, 1:, :] - coords[:, :1, :]
    all_edges = []
    for a in range(4):
        for b in range(a + 1, 4):
            all_edges.append(np.linalg.norm(coords[:, a] - coords[:, b], axis=1))
    h = float(np.max(all_edges))

    faces = {}
    local_faces = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
    for tet in tets:
        for f in local_faces:
            key = tuple(sorted(tet[list(f)]))
            faces[key] = faces.get(key, 0) + 1
    boundary = {pl: [] for pl in PLANES}
    tol = 1e-9 * max(extents)
    for key, count in faces.items():
        if count != 1:
            continue
        pts = nodes[list(key)]
        for a, pl0, pl1 in ((0, "x0", "x1"), (1, "y0", "y1"), (2, "z0", "z1")):
            if np.all(np.abs(pts[:, a]) < tol):
                boundary[pl0].append(list(key))
                break
            if np.all(np.abs(pts[:, a] - extents[a]) < tol):
                boundary[pl1].append(list(key))
                break
        else:
            raise RuntimeError("boundary face not on any box plane")
    boundary = {pl: np.array(tris, dtype=int).reshape(-1, 3)
                for pl, tris in boundary.items()}
    return BoxMesh(extents, n, nodes, tets, h, boundary)


@dataclass
class FeSpace:
    mesh: BoxMesh
    dirichlet_planes: tuple = ("x0",)
    # geometric element data and matrices, filled by build_space
    vols: np.ndarray = None
    grads: np.ndarray = None       # (nt, 4, 3) P1 basis gradients
    D: np.ndarray = None           # (nt, 6, 12) strain-displacement (Mandel)
    M: sp.csr_matrix = None        # scalar consistent mass
    Gs: sp.csr_matrix = None       # scalar gradient stiffness
    M5: sp.csr_matrix = None
    G5: sp.csr_matrix = None
    M3: sp.csr_matrix = None
    lumped: np.ndarray = None      # nodal quadrature weights
    surf: dict = None              # plane -> scalar surface mass
    dirichlet_nodes: np.ndarray = None   # bool (nn,)

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_u(self) -> int:
        return 3 * self.mesh.n_nodes

    @property
    def n_z(self) -> int:
        return 5 * self.mesh.n_nodes

    @property
    def u_free(self) -> np.ndarray:
        return ~np.repeat(self.dirichlet_nodes, 3)

    def zeros(self):
        return np.zeros(self.n_u), np.zeros(self.n_z)


def _element_geometry(mesh: BoxMesh):
    coords = mesh.nodes[mesh.tets]                       # (nt, 4, 3)
    E = coords[:, 1:, :] - coords[:, :1, :]              # rows are edges
    A = np.transpose(E, (0, 2, 1))                       # columns are edges
    vols = np.abs(np.linalg.det(A)) / 6.0
    Ainv = np.linalg.inv(A)
    grads = np.zeros((len(vols), 4, 3))
    grads[:, 1:, :] = Ainv
    grads[:, 0, :] = -Ainv.sum(axis=1)
    return vols, grads


def _strain_displacement(grads):
    nt = len(grads)
    D = np.zeros((nt, 6, 12))
    s = 1.0 / np.sqrt(2.0)
    for a in range(4):
        g = grads[:, a, :]
        col = 3 * a
        D[:, 0, col + 0] = g[:, 0]
        D[:, 1, col + 1] = g[:, 1]
        D[:, 2, col + 2] = g[:, 2]
        D[:, 3, col + 1] = s * g[:, 2]
        D[:, 3, col + 2] = s * g[:, 1]
        D[:, 4, col + 0] = s * g[:, 2]
        D[:, 4, col + 2] = s * g[:, 0]
        D[:, 5, col + 0] = s * g[:, 1]
        D[:, 5, col + 1] = s * g[:, 0]
    return D


def _scatter(nn_row, nn_col, rows, cols, vals):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(nn_row, nn_col)).tocsr()


def build_space(mesh: BoxMesh, dirichlet_planes=("x0",)) -> FeSpace:
    for pl in dirichlet_planes:
        if pl not in PLANES:
            raise ValueError(f"unknown boundary plane {pl!r}")
    space = FeSpace(mesh, tuple(dirichlet_planes))
    nn = mesh.n_nodes
    vols, grads = _element_geometry(mesh)
    space.vols, space.grads = vols, grads
    space.D = _strain_displacement(grads)

    tets = mesh.tets
    # scalar mass: vol/20 * (1 + delta_ab); scalar stiffness: vol grad.grad
    ones4 = np.ones((4, 4))
    Me = (vols[:, None, None] / 20.0) * (ones4 + np.eye(4))[None, :, :]
    Ge = np.einsum("t,tad,tbd->tab", vols, grads, grads)
    rows = np.repeat(tets, 4, axis=1)
    cols = np.tile(tets, (1, 4))
    space.M = _scatter(nn, nn, rows, cols, Me)
    space.Gs = _scatter(nn, nn, rows, cols, Ge)
    space.lumped = np.asarray(space.M.sum(axis=1)).ravel()
    space.M5 = sp.kron(space.M, sp.eye(5), format="csr")
    space.G5 = sp.kron(space.Gs, sp.eye(5), format="csr")
    space.M3 = sp.kron(space.M, sp.eye(3), format="csr")

    space.surf = {}
    for pl, tris in mesh.boundary.items():
        if len(tris) == 0:
            space.surf[pl] = sp.csr_matrix((nn, nn))
            continue
        pts = mesh.nodes[tris]
        areas = 0.5 * np.linalg.norm(
            np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]), axis=1)
        ones3 = np.ones((3, 3))
        Se = (areas[:, None, None] / 12.0) * (ones3 + np.eye(3))[None, :, :]
        r = np.repeat(tris, 3, axis=1)
        c = np.tile(tris, (1, 3))
        space.surf[pl] = _scatter(nn, nn, r, c, Se)

    mask = np.zeros(nn, dtype=bool)
    for pl in dirichlet_planes:
        mask[np.unique(mesh.boundary[pl])] = True
    space.dirichlet_nodes = mask
    return space


@dataclass
class StepForms:
    """Assembled quadratic forms for one (space, material) pair.

    energy_value is the quadratic part of the stored energy (elastic term
    plus hardening mass plus gradient term); energy_product is the
    associated symmetric bilinear form.
    """

    space: FeSpace
    params: MaterialParams
    K: sp.csr_matrix
    Cup: sp.csr_matrix

    def energy_product(self, y1, y2) -> float:
        u1, z1 = y1
        u2, z2 = y2
        G, c2, nu = self.params.elastic.G, self.params.c2, self.params.nu
        spc = self.space
        val = 0.5 * (u1 @ (self.K @ u2)) \
            - 0.5 * (u1 @ (self.Cup @ z2)) - 0.5 * (u2 @ (self.Cup @ z1)) \
            + (G + c2) * (z1 @ (spc.M5 @ z2))
        if nu:
            val += 0.5 * nu * (z1 @ (spc.G5 @ z2))
        return float(val)

    def energy_value(self, y) -> float:
        return self.energy_product(y, y)

    def matrix(self) -> sp.csr_matrix:
        """Sparse H with y . H y = energy_value(y) on stacked (u, z) dofs."""
        G, c2, nu = self.params.elastic.G, self.params.c2, self.params.nu
        spc = self.space
        Z = (G + c2) * spc.M5
        if nu:
            Z = Z + 0.5 * nu * spc.G5
        return sp.bmat([[0.5 * self.K, -0.5 * self.Cup],
                        [-0.5 * self.Cup.T, Z]], format="csr")


def assemble_forms(space: FeSpace, params: MaterialParams) -> StepForms:
    nn = space.n_nodes
    C6 = params.elastic.matrix6()
    vols, D, tets = space.vols, space.D, space.mesh.tets

    Ke = np.einsum("t,tia,ij,tjb->tab", vols, D, C6, D)
    udofs = (3 * tets[:, :, None] + np.arange(3)[None, None, :]).reshape(-1, 12)
    rows = np.repeat(udofs, 12, axis=1)
    cols = np.tile(udofs, (1, 12))
    K = _scatter(3 * nn, 3 * nn, rows, cols, Ke)

    # coupling with the nodal deviatoric field: int C eps(u) : zeta; the
    # per-z-node block repeats because int of each P1 hat is vol/4
    blk = np.einsum("t,tia,ij,jk->tak", vols / 4.0, D, C6, DEV_BASIS)  # (nt,12,5)
    zdofs = (5 * tets[:, :, None] + np.arange(5)[None, None, :]).reshape(-1, 20)
    Cup_e = np.tile(blk, (1, 1, 4))
    r = np.repeat(udofs, 20, axis=1)
    c = np.tile(zdofs, (1, 12))
    Cup = _scatter(3 * nn, 5 * nn, r, c, Cup_e)
    return StepForms(space, params, K, Cup)


# ---------------------------------------------------------------------------
# loads and boundary data


@dataclass
class LoadProgram:
    """Piecewise-linear-in-time loads and boundary displacement.

    Spatial shapes are fixed per channel (constant vectors or callables of
    position); the time dependence is a common piecewise-linear amplitude
    per channel.  Tractions act on whole box planes of the traction part
    of the boundary.
    """

    times: np.ndarray = dc_field(default_factory=lambda: np.array([0.0, 1.0]))
    traction: dict = dc_field(default_factory=dict)      # plane -> vec or fn
    traction_amps: Optional[np.ndarray] = None
    body: object = None                                   # vec or fn
    body_amps: Optional[np.ndarray] = None
    dirichlet: Optional[Callable] = None                  # fn x -> (3,)
    dirichlet_amps: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        self.times = t
        if len(t) < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("time breakpoints must be strictly increasing")
        for name in ("traction_amps", "body_amps", "dirichlet_amps"):
            amps = getattr(self, name)
            if amps is not None:
                amps = np.asarray(amps, dtype=float)
                if amps.shape != t.shape:
                    raise ValueError(f"{name} must match the time breakpoints")
                setattr(self, name, amps)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def _amp(self, amps, t):
        if amps is None:
            return 0.0
        return float(np.interp(t, self.times, amps))

    def _nodal(self, shape, nodes):
        if callable(shape):
            return np.array([shape(x) for x in nodes], dtype=float)
        return np.tile(np.asarray(shape, dtype=float), (len(nodes), 1))

    def dirichlet_vector(self, space: FeSpace, t: float) -> np.ndarray:
        """Full nodal lifting of the prescribed boundary displacement."""
        if self.dirichlet is None:
            return np.zeros(space.n_u)
        amp = self._amp(self.dirichlet_amps, t)
        vals = self._nodal(self.dirichlet, space.mesh.nodes)
        return amp * vals.ravel()


def assemble_load(space: FeSpace, program: LoadProgram, t: float) -> np.ndarray:
    """Nodal load functional <l(t), u> over the displacement dofs."""
    if t < program.times[0] - 1e-12 or t > program.times[-1] + 1e-12:
        raise ValueError("time outside the program interval")
    ell = np.zeros(space.n_u)
    if program.body is not None:
        amp = program._amp(program.body_amps, t)
        if amp != 0.0:
            f = amp * program._nodal(program.body, space.mesh.nodes)
            ell += space.M3 @ f.ravel()
    for pl, shape in program.traction.items():
        if pl in space.dirichlet_planes:
            raise ValueError(f"traction prescribed on the Dirichlet plane {pl!r}")
        amp = program._amp(program.traction_amps, t)
        if amp != 0.0:
            g = amp * program._nodal(shape, space.mesh.nodes)
            S3 = sp.kron(space.surf[pl], sp.eye(3), format="csr")
            ell += S3 @ g.ravel()
    return ell


# ---------------------------------------------------------------------------
# point location, injection, projection, interpolation


def locate(mesh: BoxMesh, pts):
    """Cells, element ids and P1 weights for points in the box."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = mesh.n.astype(int)
    cell_sizes = mesh.extents / n
    s = pts / cell_sizes[None, :]
    cells = np.clip(np.floor(s).astype(int), 0, n - 1)
    xi = s - cells
    order = np.argsort(-xi, axis=1, kind="stable")  # descending local coords
    nx, ny = int(n[0]), int(n[1])
    cell_id = cells[:, 0] + nx * (cells[:, 1] + ny * cells[:, 2])
    weights = np.empty((len(pts), 4))
    node_ids = np.empty((len(pts), 4), dtype=int)
    nid_stride = np.array([1, n[0] + 1, (n[0] + 1) * (n[1] + 1)])
    base = (cells * nid_stride[None, :]).sum(axis=1)
    code_to_perm = np.full(27, -1, dtype=int)
    for k, perm in enumerate(_PERMS):
        code_to_perm[perm[0] * 9 + perm[1] * 3 + perm[2]] = k
    perm_ids = code_to_perm[order[:, 0] * 9 + order[:, 1] * 3 + order[:, 2]]
    xs = np.take_along_axis(xi, order, axis=1)
    weights[:, 0] = 1.0 - xs[:, 0]
    weights[:, 1] = xs[:, 0] - xs[:, 1]
    weights[:, 2] = xs[:, 1] - xs[:, 2]
    weights[:, 3] = xs[:, 2]
    node_ids[:, 0] = base
    acc = base.copy()
    for step in range(3):
        acc = acc + nid_stride[order[:, step]]
        node_ids[:, step + 1] = acc
    return cell_id, perm_ids, weights, node_ids


def inject(coarse: FeSpace, fine: FeSpace) -> sp.csr_matrix:
    """Scalar interpolation matrix from the coarse to the fine node set."""
    _, _, w, nid = locate(coarse.mesh, fine.mesh.nodes)
    rows = np.repeat(np.arange(fine.n_nodes), 4)
    return sp.coo_matrix((w.ravel(), (rows, nid.ravel())),
                         shape=(fine.n_nodes, coarse.n_nodes)).tocsr()


def nodal_interp(space: FeSpace, fn, width: int) -> np.ndarray:
    vals = np.array([fn(x) for x in space.mesh.nodes], dtype=float)
    return vals.reshape(space.n_nodes, width).ravel()


def galerkin_project(coarse: FeSpace, fine: FeSpace, params: MaterialParams,
                     u_f, z_f):
    """Best approximation in the energy inner product on the coarse space.

    Operates on the homogeneous-Dirichlet subspace; the input must vanish
    on the fine Dirichlet dofs.
    """
    if params.c2 <= 0 and params.nu <= 0:
        raise SingularFormError("projector needs c2 > 0 or nu > 0")
    if not coarse.dirichlet_nodes.any():
        raise SingularFormError("projector needs a nonempty Dirichlet part")
    forms_f = assemble_forms(fine, params)
    H = forms_f.matrix()
    P = inject(coarse, fine)
    Pu = sp.kron(P, sp.eye(3), format="csr")
    Pz = sp.kron(P, sp.eye(5), format="csr")
    Pfull = sp.block_diag([Pu, Pz], format="csr")
    y = np.concatenate([np.asarray(u_f, dtype=float), np.asarray(z_f, dtype=float)])
    free = np.concatenate([coarse.u_free, np.ones(coarse.n_z, dtype=bool)])
    A = (Pfull.T @ H @ Pfull).tocsr()[free][:, free]
    rhs = (Pfull.T @ (H @ y))[free]
    sol = np.zeros(coarse.n_u + coarse.n_z)
    sol[free] = spla.spsolve(A.tocsc(), rhs)
    return sol[:coarse.n_u], sol[coarse.n_u:]


def interp_constrained(coarse: FeSpace, fine: FeSpace, z_f) -> np.ndarray:
    """Patch-averaging interpolant that preserves nodal norm bounds.

    Each coarse nodal value is the volume-weighted mean of the fine field
    over the coarse elements containing the node: a convex combination of
    fine nodal values, so |z| <= c implies the same bound at every coarse
    node (Jensen).
    """
    Z = np.asarray(z_f, dtype=float).reshape(fine.n_nodes, 5)
    fine_means = Z[fine.mesh.tets].mean(axis=1)            # (nt_f, 5)
    fine_vols = fine.vols
    bary = fine.mesh.nodes[fine.mesh.tets].mean(axis=1)
    cell_id, perm_id, _, _ = locate(coarse.mesh, bary)
    coarse_elem = 6 * cell_id + perm_id
    nt_c = len(coarse.mesh.tets)
    acc = np.zeros((nt_c, 5))
    accv = np.zeros(nt_c)
    np.add.at(acc, coarse_elem, fine_means * fine_vols[:, None])
    np.add.at(accv, coarse_elem, fine_vols)
    node_acc = np.zeros((coarse.n_nodes, 5))
    node_vol = np.zeros(coarse.n_nodes)
    for a in range(4):
        np.add.at(node_acc, coarse.mesh.tets[:, a], acc)
        np.add.at(node_vol, coarse.mesh.tets[:, a], accv)
    return (node_acc / node_vol[:, None]).ravel()


def dump_fields(path, space: FeSpace, fields: dict):
    """Write node coordinates, per-node fields and connectivity as text."""
    widths = {}
    arrays = {}
    for name, arr in fields.items():
        arr = np.asarray(arr, dtype=float)
        arr = arr.reshape(space.n_nodes, -1)
        widths[name] = arr.shape[1]
        arrays[name] = arr
    fields_desc = ",".join(f"{name}:{w}" for name, w in widths.items())
    lines = [f"# smaevol-fields nodes={space.n_nodes} tets={len(space.mesh.tets)} "
             f"fields={fields_desc}"]
    for i, x in enumerate(space.mesh.nodes):
        vals = [f"{v:.17g}" for v in x]
        for name in arrays:
            vals.extend(f"{v:.17g}" for v in arrays[name][i])
        lines.append(" ".join(vals))
    lines.append("# tets")
    for tet in space.mesh.tets:
        lines.append(" ".join(str(int(v)) for v in tet))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
