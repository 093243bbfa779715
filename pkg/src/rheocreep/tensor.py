"""Small dense tensor algebra for d = 2, 3.

Every routine accepts arbitrary leading batch dimensions, so the same kernels
serve a single material point and a whole array of quadrature points:
matrices have shape ``(..., d, d)``, third-order tensors ``(..., d, d, d)``
and fourth-order tensors ``(..., d, d, d, d)``.
"""

import numpy as np

SINGULAR_RTOL = 1e-14


class SingularMatrix(ValueError):
    pass


class NonPositiveDeterminant(ValueError):
    pass


def _check_dim(d):
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    return d


def _same_trailing(a, b, n, name):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim < n or b.ndim < n or a.shape[-n:] != b.shape[-n:]:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def identity(d):
    return np.eye(_check_dim(d))


def identity4(d):
    """Fourth-order identity on matrices: (I4 : A) = A."""
    eye = np.eye(_check_dim(d))
    return np.einsum("ik,jl->ijkl", eye, eye)


# -- contractions ----------------------------------------------------------

_BATCH_LETTER = "Z"
_SMALL_BATCH = 64


def batched_einsum(subscripts, *operands):
    """``np.einsum`` for expressions whose operands all start with ``...``.

    For large batches the operands are laid out batch-last first, which lets
    einsum's inner loop run over the batch instead of over axes of length 2
    or 3. Results equal ``np.einsum(subscripts, *operands)``.
    """
    ins, out = subscripts.replace(" ", "").split("->")
    terms = [t[3:] if t.startswith("...") else None for t in ins.split(",")]
    if any(t is None for t in terms) or not out.startswith("..."):
        raise ValueError(f"every operand and the output need a leading '...': {subscripts}")
    out = out[3:]
    ops = [np.asarray(o, dtype=float) for o in operands]
    batch = np.broadcast_shapes(*[o.shape[:o.ndim - len(t)] for o, t in zip(ops, terms)])
    size = int(np.prod(batch))
    if size < _SMALL_BATCH:
        return np.einsum(subscripts, *ops)
    moved = []
    for o, t in zip(ops, terms):
        tail = o.shape[o.ndim - len(t):]
        flat = np.broadcast_to(o, batch + tail).reshape((size,) + tail)
        moved.append(np.ascontiguousarray(np.moveaxis(flat, 0, -1)))
    expr = ",".join(t + _BATCH_LETTER for t in terms) + "->" + out + _BATCH_LETTER
    res = np.einsum(expr, *moved)
    return np.ascontiguousarray(np.moveaxis(res, -1, 0)).reshape(batch + res.shape[:-1])


def contract22(A, B):
    """A : B = A_ij B_ij."""
    A, B = _same_trailing(A, B, 2, "contract22")
    return np.einsum("...ij,...ij->...", A, B)


def contract33(B, C):
    """B ⋮ C = B_ijk C_ijk."""
    B, C = _same_trailing(B, C, 3, "contract33")
    return np.einsum("...ijk,...ijk->...", B, C)


def contract44(C, D):
    C, D = _same_trailing(C, D, 4, "contract44")
    return np.einsum("...ijkl,...ijkl->...", C, D)


def contract42(C, A):
    """(C : A)_ij = C_ijkl A_kl."""
    C = np.asarray(C, dtype=float)
    A = np.asarray(A, dtype=float)
    if C.ndim < 4 or A.ndim < 2 or C.shape[-2:] != A.shape[-2:]:
        raise ValueError(f"contract42: shape mismatch {C.shape} vs {A.shape}")
    return np.einsum("...ijkl,...kl->...ij", C, A)


def contract32(B, A):
    """(B : A)_i = B_ijk A_jk."""
    B = np.asarray(B, dtype=float)
    A = np.asarray(A, dtype=float)
    if B.ndim < 3 or A.ndim < 2 or B.shape[-2:] != A.shape[-2:]:
        raise ValueError(f"contract32: shape mismatch {B.shape} vs {A.shape}")
    return np.einsum("...ijk,...jk->...i", B, A)


def apply4t(C):
    """Partial transpose of a four-tensor over its first two indices."""
    C = np.asarray(C, dtype=float)
    if C.ndim < 4:
        raise ValueError(f"apply4t: expected a four-tensor, got shape {C.shape}")
    return np.swapaxes(C, -4, -3)


def transpose(A):
    return np.swapaxes(A, -1, -2)


def sym(A):
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + transpose(A))


def norm(T):
    """Frobenius norm of the whole array (no batching)."""
    return float(np.sqrt(np.sum(np.square(T))))


# -- determinants and inverses --------------------------------------------

def det(A):
    A = np.asarray(A, dtype=float)
    d = _check_dim(A.shape[-1])
    if A.shape[-2] != d:
        raise ValueError(f"det: non-square shape {A.shape}")
    if d == 2:
        return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    return (A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1])
            - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 0])
            + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0]))


def cofactor(A):
    """Cofactor matrix, Cof(A) = det(A) A^{-T}, so that A^{-1} = Cof(A)^T / det A."""
    A = np.asarray(A, dtype=float)
    d = _check_dim(A.shape[-1])
    out = np.empty_like(A)
    if d == 2:
        out[..., 0, 0] = A[..., 1, 1]
        out[..., 0, 1] = -A[..., 1, 0]
        out[..., 1, 0] = -A[..., 0, 1]
        out[..., 1, 1] = A[..., 0, 0]
        return out
    # rows of Cof(A) are cross products of the other two rows of A
    r0, r1, r2 = A[..., 0, :], A[..., 1, :], A[..., 2, :]
    out[..., 0, :] = np.cross(r1, r2)
    out[..., 1, :] = np.cross(r2, r0)
    out[..., 2, :] = np.cross(r0, r1)
    return out


def inverse(A):
    A = np.asarray(A, dtype=float)
    J = det(A)
    scale = np.maximum(1.0, np.sqrt(np.einsum("...ij,...ij->...", A, A)))
    if np.any(np.abs(J) <= SINGULAR_RTOL * scale):
        raise SingularMatrix(f"matrix is singular to tolerance (min |det| = {np.min(np.abs(J)):.3e})")
    return transpose(cofactor(A)) / J[..., None, None]


def inverse_transpose(A):
    return transpose(inverse(A))


# -- derivative identities -------------------------------------------------

def dinv_dir(A, H):
    """Directional derivative of the inverse, D(A^{-1}) : H = -A^{-1} H A^{-1}."""
    Ainv = inverse(A)
    return -Ainv @ np.asarray(H, dtype=float) @ Ainv


def dinvT_dir(A, H):
    """D(A^{-T}) : H = -A^{-T} H^T A^{-T}."""
    AinvT = inverse_transpose(A)
    return -AinvT @ transpose(np.asarray(H, dtype=float)) @ AinvT


def dinv_tensor(A):
    """D(A^{-1}) as a four-tensor: D(A^{-1})_ijkl = -(A^{-1})_ik (A^{-1})_lj."""
    Ainv = inverse(A)
    return -np.einsum("...ik,...lj->...ijkl", Ainv, Ainv)


def ddet_dir(A, H):
    """D(det A) : H = Cof(A) : H."""
    return contract22(cofactor(A), H)


def grad_product(A, gradA, B, gradB):
    """Gradient of a matrix product field: ∂_k (AB)_ij = ∂_k A_im B_mj + A_im ∂_k B_mj."""
    return (batched_einsum("...imk,...mj->...ijk", gradA, B)
            + batched_einsum("...im,...mjk->...ijk", A, gradB))


def grad_inverse(A, gradA):
    """Gradient of A^{-1} given ∇A: ∂_k A^{-1} = -A^{-1} (∂_k A) A^{-1}."""
    Ainv = inverse(A)
    return -batched_einsum("...im,...mnk,...nj->...ijk", Ainv, gradA, Ainv)
