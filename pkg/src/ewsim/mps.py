"""Matrix-product states with a canonical center, for pure chains (d=2) and
vectorized density operators (d=4, per-site index 2*ket + bra).

Site tensors have legs (bond_left, phys, bond_right).  Tensors left of the
center are left-isometric, right of it right-isometric; the center carries
the norm.  Truncation keeps the largest chi singular values (plus a relative
machine-noise floor) and accumulates the discarded weight.

Hopping conserves particle number (pure) and ket-minus-bra charge
(vectorized operators), so every bond state carries a definite accumulated
charge.  Bond charge labels are tracked alongside the dense tensors and all
splits (SVD/QR) factor into independent per-charge blocks, which is what
makes chi of a few hundred affordable; states built without a definite
charge fall back to a single all-zero block and behave like plain dense MPS.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la


class MPSError(RuntimeError):
    """Structural failure (bad legs, center misuse, corrupt checkpoint)."""


class TruncationPanic(RuntimeError):
    """Discarded weight in one step exceeded the configured panic threshold."""


TRACE_VEC = np.array([1.0, 0.0, 0.0, 1.0])     # vec(identity) per doubled site
NUMBER_VEC = np.array([0.0, 0.0, 0.0, 1.0])    # vec applied to tr(n rho)

PURE_SITE_CHARGES = np.array([0, 1], dtype=np.int64)
DOUBLED_SITE_CHARGES = np.array([0, -1, 1, 0], dtype=np.int64)  # ket - bra


def _svd(mat: np.ndarray):
    try:
        return la.svd(mat, full_matrices=False, lapack_driver="gesdd")
    except la.LinAlgError:
        return la.svd(mat, full_matrices=False, lapack_driver="gesvd")


def charged_split(
    M: np.ndarray,
    row_q: np.ndarray,
    col_q: np.ndarray,
    chi_max: int | None,
    rank_tol: float,
):
    """Blockwise SVD of a charge-conserving matrix.

    Rows with charge v only couple to columns with charge v; the global
    truncation keeps the chi_max largest singular values across blocks (and
    always drops values below rank_tol * s_max).  Returns
    (U, S, Vh, new_charges, discarded_weight_fraction).
    """
    blocks = []
    values = np.intersect1d(np.unique(row_q), np.unique(col_q))
    for v in values:
        rows = np.nonzero(row_q == v)[0]
        cols = np.nonzero(col_q == v)[0]
        sub = M[np.ix_(rows, cols)]
        if not np.any(sub):
            continue
        u, s, vh = _svd(sub)
        blocks.append((v, rows, cols, u, s, vh))
    if not blocks:
        raise MPSError("zero matrix in charged split")
    all_s = np.concatenate([b[4] for b in blocks])
    total2 = float(all_s @ all_s)
    s_max = float(all_s.max())
    order = np.argsort(-all_s, kind="stable")
    limit = len(order) if chi_max is None else min(chi_max, len(order))
    kept_mask = np.zeros(len(all_s), dtype=bool)
    kept = 0
    for j in order[:limit]:
        if all_s[j] < rank_tol * s_max and kept > 0:
            break
        kept_mask[j] = True
        kept += 1
    # distribute the kept flags back into per-block counts (s is descending
    # inside each block, so a count is enough)
    keep_counts = []
    off = 0
    for b in blocks:
        n = len(b[4])
        keep_counts.append(int(kept_mask[off : off + n].sum()))
        off += n
    new_dim = sum(keep_counts)
    U = np.zeros((M.shape[0], new_dim), dtype=M.dtype)
    S = np.empty(new_dim)
    Vh = np.zeros((new_dim, M.shape[1]), dtype=M.dtype)
    charges = np.empty(new_dim, dtype=np.int64)
    pos = 0
    for (v, rows, cols, u, s, vh), kc in zip(blocks, keep_counts):
        if kc == 0:
            continue
        U[rows, pos : pos + kc] = u[:, :kc]
        S[pos : pos + kc] = s[:kc]
        Vh[pos : pos + kc][:, cols] = vh[:kc]
        charges[pos : pos + kc] = v
        pos += kc
    kept2 = float(S @ S)
    disc = max(0.0, 1.0 - kept2 / total2)
    return U, S, Vh, charges, disc


def charged_qr(M: np.ndarray, row_q: np.ndarray, col_q: np.ndarray):
    """Blockwise thin QR of a charge-conserving matrix.

    Returns (Q, R, new_charges) with orthonormal Q columns; columns of M
    whose charge has no matching row are zero in a consistent state and are
    dropped.
    """
    values = np.intersect1d(np.unique(row_q), np.unique(col_q))
    pieces = []
    for v in values:
        rows = np.nonzero(row_q == v)[0]
        cols = np.nonzero(col_q == v)[0]
        q, r = np.linalg.qr(M[np.ix_(rows, cols)])
        pieces.append((v, rows, cols, q, r))
    if not pieces:
        raise MPSError("zero matrix in charged QR")
    new_dim = sum(p[3].shape[1] for p in pieces)
    Q = np.zeros((M.shape[0], new_dim), dtype=M.dtype)
    R = np.zeros((new_dim, M.shape[1]), dtype=M.dtype)
    charges = np.empty(new_dim, dtype=np.int64)
    pos = 0
    for v, rows, cols, q, r in pieces:
        k = q.shape[1]
        Q[rows, pos : pos + k] = q
        R[pos : pos + k][:, cols] = r
        charges[pos : pos + k] = v
        pos += k
    return Q, R, charges


@dataclass
class MatrixProductState:
    tensors: list[np.ndarray]
    center: int
    chi_max: int
    renormalize: bool = True
    rank_tol: float = 1e-14
    bond_charges: list[np.ndarray] = field(default_factory=list)
    cum_discarded: float = 0.0
    step_discarded: float = 0.0
    norm_drift: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        if not self.bond_charges:
            self.bond_charges = [
                np.zeros(t.shape[0], dtype=np.int64) for t in self.tensors
            ] + [np.zeros(self.tensors[-1].shape[2], dtype=np.int64)]

    # -- construction ---------------------------------------------------

    @classmethod
    def from_product(
        cls, site_vectors: list[np.ndarray], chi_max: int, renormalize: bool = True
    ) -> "MatrixProductState":
        tensors = [np.asarray(v, dtype=complex).reshape(1, -1, 1) for v in site_vectors]
        d = tensors[0].shape[1]
        site_q = cls._site_charges_for(d)
        charges = [np.zeros(1, dtype=np.int64)]
        tagged = site_q is not None
        for v in site_vectors:
            if not tagged:
                break
            qs = {int(site_q[p]) for p in np.nonzero(np.asarray(v))[0]}
            if len(qs) != 1:
                tagged = False
                break
            charges.append(charges[-1] + qs.pop())
        if not tagged:
            charges = [np.zeros(1, dtype=np.int64) for _ in range(len(tensors) + 1)]
        return cls(
            tensors=tensors, center=0, chi_max=chi_max,
            renormalize=renormalize, bond_charges=charges,
        )

    @staticmethod
    def _site_charges_for(d: int) -> np.ndarray | None:
        if d == 2:
            return PURE_SITE_CHARGES
        if d == 4:
            return DOUBLED_SITE_CHARGES
        return None

    @property
    def site_charges(self) -> np.ndarray:
        q = self._site_charges_for(self.phys_dim)
        if q is None:
            raise MPSError(f"no charge convention for phys_dim {self.phys_dim}")
        return q

    @property
    def L(self) -> int:
        return len(self.tensors)

    @property
    def phys_dim(self) -> int:
        return self.tensors[0].shape[1]

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def norm(self) -> float:
        return float(np.linalg.norm(self.tensors[self.center]))

    def copy(self) -> "MatrixProductState":
        return MatrixProductState(
            tensors=[t.copy() for t in self.tensors],
            center=self.center,
            chi_max=self.chi_max,
            renormalize=self.renormalize,
            rank_tol=self.rank_tol,
            bond_charges=[c.copy() for c in self.bond_charges],
            cum_discarded=self.cum_discarded,
            step_discarded=self.step_discarded,
            norm_drift=self.norm_drift,
            time=self.time,
        )

    # -- canonical-center moves (blockwise QR, exact) ---------------------

    def _shift_right(self) -> None:
        c = self.center
        A = self.tensors[c]
        dl, d, dr = A.shape
        row_q = (self.bond_charges[c][:, None] + self.site_charges[None, :]).ravel()
        Q, R, charges = charged_qr(
            A.reshape(dl * d, dr), row_q, self.bond_charges[c + 1]
        )
        self.tensors[c] = Q.reshape(dl, d, -1)
        self.tensors[c + 1] = np.tensordot(R, self.tensors[c + 1], axes=(1, 0))
        self.bond_charges[c + 1] = charges
        self.center = c + 1

    def _shift_left(self) -> None:
        c = self.center
        A = self.tensors[c]
        dl, d, dr = A.shape
        col_q = (self.bond_charges[c + 1][None, :] - self.site_charges[:, None]).ravel()
        Q, R, charges = charged_qr(
            A.reshape(dl, d * dr).T, col_q, self.bond_charges[c]
        )
        self.tensors[c] = Q.T.reshape(-1, d, dr)
        self.tensors[c - 1] = np.tensordot(self.tensors[c - 1], R.T, axes=(2, 0))
        self.bond_charges[c] = charges
        self.center = c - 1

    def move_center(self, i: int) -> None:
        if not (0 <= i < self.L):
            raise MPSError(f"center {i} outside chain of length {self.L}")
        while self.center < i:
            self._shift_right()
        while self.center > i:
            self._shift_left()

    def move_center_into(self, lo: int, hi: int) -> None:
        if self.center < lo:
            self.move_center(lo)
        elif self.center > hi:
            self.move_center(hi)

    # -- three-site gate --------------------------------------------------

    def _gate_split(self, M, row_q, col_q):
        U, S, Vh, charges, disc = charged_split(
            M, row_q, col_q, chi_max=self.chi_max, rank_tol=self.rank_tol
        )
        if self.renormalize and disc > 0.0:
            S = S / np.sqrt(max(1.0 - disc, 1e-300))
            self.norm_drift += 1.0 - np.sqrt(1.0 - disc)
        self.step_discarded += disc
        self.cum_discarded += disc
        return U, S, Vh, charges

    def apply_three_site(self, start: int, gate: np.ndarray, leave: str = "right") -> None:
        """Contract sites (start..start+2), apply gate, re-split with
        truncation.  ``gate`` is (d^3, d^3), leftmost site index slowest; the
        center ends on start+2 (leave='right') or start (leave='left')."""
        if not (start <= self.center <= start + 2):
            raise MPSError("center must sit inside the gate window")
        d = self.phys_dim
        q = self.site_charges
        A, B, C = self.tensors[start], self.tensors[start + 1], self.tensors[start + 2]
        dl, dr = A.shape[0], C.shape[2]
        theta = np.tensordot(A, B, axes=(2, 0))          # dl p1 p2 m
        theta = np.tensordot(theta, C, axes=(3, 0))      # dl p1 p2 p3 dr
        theta = np.tensordot(gate, theta.reshape(dl, d ** 3, dr), axes=(1, 1))
        theta = theta.transpose(1, 0, 2)                 # dl P dr
        cl = self.bond_charges[start]
        cr = self.bond_charges[start + 3]

        if leave == "right":
            row_q = (cl[:, None] + q[None, :]).ravel()
            col_q = (
                cr[None, None, :] - q[:, None, None] - q[None, :, None]
            ).ravel()
            U, S, Vh, c1 = self._gate_split(
                theta.reshape(dl * d, d * d * dr), row_q, col_q
            )
            r1 = len(S)
            self.tensors[start] = U.reshape(dl, d, r1)
            self.bond_charges[start + 1] = c1
            rest = (S[:, None] * Vh).reshape(r1 * d, d * dr)
            row_q2 = (c1[:, None] + q[None, :]).ravel()
            col_q2 = (cr[None, :] - q[:, None]).ravel()
            U2, S2, Vh2, c2 = self._gate_split(rest, row_q2, col_q2)
            r2 = len(S2)
            self.tensors[start + 1] = U2.reshape(r1, d, r2)
            self.tensors[start + 2] = (S2[:, None] * Vh2).reshape(r2, d, dr)
            self.bond_charges[start + 2] = c2
            self.center = start + 2
        elif leave == "left":
            row_q = (
                cl[:, None, None] + q[None, :, None] + q[None, None, :]
            ).ravel()
            col_q = (cr[None, :] - q[:, None]).ravel()
            U, S, Vh, c2 = self._gate_split(
                theta.reshape(dl * d * d, d * dr), row_q, col_q
            )
            r1 = len(S)
            self.tensors[start + 2] = Vh.reshape(r1, d, dr)
            self.bond_charges[start + 2] = c2
            rest = (U * S).reshape(dl * d, d * r1)
            row_q2 = (cl[:, None] + q[None, :]).ravel()
            col_q2 = (c2[None, :] - q[:, None]).ravel()
            U2, S2, Vh2, c1 = self._gate_split(rest, row_q2, col_q2)
            r2 = len(S2)
            self.tensors[start + 1] = Vh2.reshape(r2, d, r1)
            self.tensors[start] = (U2 * S2).reshape(dl, d, r2)
            self.bond_charges[start + 1] = c1
            self.center = start
        else:
            raise MPSError(f"unknown leave direction {leave!r}")

    # -- measurement ------------------------------------------------------

    def site_expectations(self, op: np.ndarray) -> np.ndarray:
        """<op_i> for every site of a pure state, one left-to-right sweep."""
        self.move_center(0)
        out = np.empty(self.L)
        for i in range(self.L):
            A = self.tensors[i]
            n2 = np.vdot(A, A).real
            rho = np.tensordot(A.conj(), A, axes=([0, 2], [0, 2]))  # p p'
            out[i] = float(np.tensordot(rho, op, axes=([0, 1], [0, 1])).real) / n2
            if i < self.L - 1:
                self._shift_right()
        return out

    def bond_entropy(self, bond: int) -> float:
        """Von Neumann entropy across bond (bond, bond+1), 0-based."""
        self.move_center(bond)
        A = self.tensors[bond]
        dl, d, dr = A.shape
        S = la.svd(A.reshape(dl * d, dr), compute_uv=False)
        p = S * S
        p = p / p.sum()
        p = p[p > 1e-300]
        return float(-(p * np.log(p)).sum())

    def to_vector(self) -> np.ndarray:
        """Dense amplitude vector (site 1 slowest); small L only."""
        if self.L * np.log2(self.phys_dim) > 24:
            raise MPSError("chain too large to densify")
        v = self.tensors[0]
        for A in self.tensors[1:]:
            v = np.tensordot(v, A, axes=(v.ndim - 1, 0))
        return v.reshape(-1)

    def inner(self, other: "MatrixProductState") -> complex:
        """<self|other> by transfer-matrix contraction."""
        if self.L != other.L or self.phys_dim != other.phys_dim:
            raise MPSError("incompatible chains")
        E = np.ones((1, 1), dtype=complex)
        for a, b in zip(self.tensors, other.tensors):
            E = np.tensordot(E, b, axes=(1, 0))                   # l p r
            E = np.tensordot(a.conj(), E, axes=([0, 1], [0, 1]))  # r' r
        return complex(E[0, 0])

    # -- vectorized-operator (d=4) helpers --------------------------------

    def trace_mixed(self) -> complex:
        if self.phys_dim != 4:
            raise MPSError("trace contraction requires the doubled local space")
        env = np.ones(1, dtype=complex)
        for A in self.tensors:
            env = env @ np.tensordot(TRACE_VEC, A, axes=(0, 1))
        return complex(env[0])

    def densities_mixed(self) -> np.ndarray:
        """tr(rho n_i) / tr(rho) for every site, O(L chi^2)."""
        if self.phys_dim != 4:
            raise MPSError("mixed densities require the doubled local space")
        mats = [np.tensordot(TRACE_VEC, A, axes=(0, 1)) for A in self.tensors]
        nmats = [np.tensordot(NUMBER_VEC, A, axes=(0, 1)) for A in self.tensors]
        L = self.L
        lenvs = [np.ones(1, dtype=complex)]
        for i in range(L - 1):
            lenvs.append(lenvs[-1] @ mats[i])
        renv = np.ones(1, dtype=complex)
        out = np.empty(L)
        for i in range(L - 1, -1, -1):
            out[i] = (lenvs[i] @ nmats[i] @ renv).real
            renv = mats[i] @ renv
        trace = (lenvs[-1] @ mats[-1] @ np.ones(1, dtype=complex)).real
        return out / trace

    def hermiticity_defect(self) -> float:
        """|rho - rho^dagger| / |rho| in the vectorized 2-norm."""
        swapped = self.copy()
        perm = [0, 2, 1, 3]  # (ket,bra) -> (bra,ket)
        swapped.tensors = [A.conj()[:, perm, :] for A in self.tensors]
        n2 = self.inner(self).real
        cross = swapped.inner(self).real
        return float(np.sqrt(max(0.0, 2.0 * (n2 - cross))) / np.sqrt(n2))

    # -- diagnostics --------------------------------------------------------

    def canonical_defect(self) -> float:
        """Largest deviation from the left/right isometry conditions."""
        worst = 0.0
        for i, A in enumerate(self.tensors):
            dl, d, dr = A.shape
            if i < self.center:
                M = A.reshape(dl * d, dr)
                worst = max(worst, float(np.abs(M.conj().T @ M - np.eye(dr)).max()))
            elif i > self.center:
                M = A.reshape(dl, d * dr)
                worst = max(worst, float(np.abs(M @ M.conj().T - np.eye(dl)).max()))
        return worst

    def charge_defect(self) -> float:
        """Largest tensor entry violating the bond charge labels (exact 0
        for states built and evolved inside one charge sector)."""
        q = self.site_charges
        worst = 0.0
        for i, A in enumerate(self.tensors):
            allowed = (
                self.bond_charges[i][:, None, None] + q[None, :, None]
                == self.bond_charges[i + 1][None, None, :]
            )
            if not allowed.all():
                worst = max(worst, float(np.abs(A[~allowed]).max()))
        return worst

    # -- checkpointing ------------------------------------------------------

    MAGIC = b"EWMPS1"

    def save(self, path) -> None:
        """Binary checkpoint: header {magic, L, phys_dim, chi, center, time},
        then per-site (dl, d, dr) shapes and row-major little-endian float64
        pairs (re, im) per tensor entry."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<6sIIIId", self.MAGIC, self.L, self.phys_dim,
                                 self.chi_max, self.center, self.time))
            for A in self.tensors:
                dl, d, dr = A.shape
                fh.write(struct.pack("<III", dl, d, dr))
                fh.write(np.ascontiguousarray(A, dtype="<c16").tobytes())

    @classmethod
    def load(cls, path, renormalize: bool = True) -> "MatrixProductState":
        with open(path, "rb") as fh:
            head = fh.read(struct.calcsize("<6sIIIId"))
            magic, L, d, chi, center, time = struct.unpack("<6sIIIId", head)
            if magic != cls.MAGIC:
                raise MPSError(f"not an MPS checkpoint: magic {magic!r}")
            tensors = []
            for _ in range(L):
                dl, pd, dr = struct.unpack("<III", fh.read(12))
                raw = fh.read(dl * pd * dr * 16)
                if len(raw) != dl * pd * dr * 16:
                    raise MPSError("truncated checkpoint payload")
                tensors.append(np.frombuffer(raw, dtype="<c16").reshape(dl, pd, dr).copy())
        charges = _detect_bond_charges(tensors, cls._site_charges_for(int(d)))
        state = cls(tensors=tensors, center=int(center), chi_max=int(chi),
                    renormalize=renormalize, time=float(time),
                    bond_charges=charges or [])
        return state


def _detect_bond_charges(tensors, site_q) -> list[np.ndarray] | None:
    """Recover bond charge labels from exact zero structure; None if the
    state is not charge-pure."""
    if site_q is None:
        return None
    charges = [np.zeros(1, dtype=np.int64)]
    for A in tensors:
        dl, d, dr = A.shape
        rq = (charges[-1][:, None] + site_q[None, :]).ravel()
        M = A.reshape(dl * d, dr)
        cr = np.empty(dr, dtype=np.int64)
        for j in range(dr):
            nz = np.nonzero(M[:, j])[0]
            if nz.size == 0:
                return None
            vals = np.unique(rq[nz])
            if vals.size != 1:
                return None
            cr[j] = vals[0]
        charges.append(cr)
    return charges
