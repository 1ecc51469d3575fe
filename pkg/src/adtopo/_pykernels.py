"""Pure numpy versions of the compiled kernels in ``_ckernels``.

Same signatures and semantics, negative indices included.
"""
import numpy as np


def scatter_add_vector(out, idx, vals):
    keep = idx >= 0
    out += np.bincount(idx[keep], weights=vals[keep], minlength=out.shape[0])


def scatter_add_matrix(out, rows, cols, vals):
    keep = (rows >= 0) & (cols >= 0)
    m, n = out.shape
    flat = rows[keep] * n + cols[keep]
    out += np.bincount(flat, weights=vals[keep], minlength=m * n).reshape(m, n)


def gather_vector(src, idx):
    res = np.zeros(idx.shape[0])
    keep = idx >= 0
    res[keep] = src[idx[keep]]
    return res


def gather_matrix(src, rows, cols):
    res = np.zeros(rows.shape[0])
    keep = (rows >= 0) & (cols >= 0)
    res[keep] = src[rows[keep], cols[keep]]
    return res


def gather_lowrank(left, right, rows, cols):
    res = np.zeros(rows.shape[0])
    keep = (rows >= 0) & (cols >= 0)
    res[keep] = np.einsum("kq,kq->k", left[rows[keep]], right[cols[keep]])
    return res


def cone_weights(nelx, nely, radius):
    reach = int(radius)
    i1, j1 = np.meshgrid(np.arange(nelx), np.arange(nely), indexing="ij")
    i1 = i1.ravel()
    j1 = j1.ravel()
    rows, cols, vals = [], [], []
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            w = radius - np.sqrt(di * di + dj * dj)
            if w <= 0.0:
                continue
            i2 = i1 + di
            j2 = j1 + dj
            ok = (i2 >= 0) & (i2 < nelx) & (j2 >= 0) & (j2 < nely)
            rows.append(i1[ok] * nely + j1[ok])
            cols.append(i2[ok] * nely + j2[ok])
            vals.append(np.full(int(ok.sum()), w))
    return (np.concatenate(rows).astype(np.int64),
            np.concatenate(cols).astype(np.int64),
            np.concatenate(vals))
