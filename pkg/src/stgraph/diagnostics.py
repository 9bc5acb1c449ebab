"""Spectral and sparsity instrumentation for supergraphs.

Sparsity, Dirichlet energy, Laplacian spectra via a cyclic Jacobi
eigensolver, Fiedler values, and BFS connected components. The zero
eigenvalue count of a Laplacian and the BFS component count must agree;
both are reported so that they can cross-check each other.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError
from .supergraph import laplacian

ZERO_EIGENVALUE_FACTOR = 1e-8
_JACOBI_TOL_FACTOR = 1e-12


def sparsity(matrix: np.ndarray) -> float:
    """Fraction of exactly-zero entries."""
    m = np.asarray(matrix)
    total = m.size
    if total == 0:
        return 1.0
    return float((total - np.count_nonzero(m)) / total)


def delta_sparsity(originals: list[np.ndarray], mendeds: list[np.ndarray]) -> float:
    """Mean over samples of sparsity(original) - sparsity(mended).

    Positive values mean mending densified the adjacency."""
    if len(originals) != len(mendeds):
        raise ContractError(f"delta_sparsity: list lengths differ, {len(originals)} vs {len(mendeds)}")
    if not originals:
        raise ContractError("delta_sparsity: empty input")
    return float(np.mean([sparsity(a) - sparsity(b) for a, b in zip(originals, mendeds)]))


def dirichlet(features: np.ndarray, weights: np.ndarray) -> float:
    """Dirichlet energy tr(X^T L X) = 1/2 sum_ij W_ij ||x_i - x_j||^2."""
    x = np.asarray(features, dtype=np.float64)
    lap = laplacian(weights)  # validates symmetry and nonnegativity
    if x.ndim != 2 or x.shape[0] != lap.shape[0]:
        raise ContractError(f"dirichlet: features {x.shape} do not match weights {lap.shape}")
    return float(np.trace(x.T @ lap @ x))


def spectrum(matrix: np.ndarray, max_sweeps: int = 100) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, sorted ascending.

    Cyclic Jacobi rotations; converged when the largest off-diagonal
    magnitude drops below 1e-12 times the Frobenius norm. Rotations on
    entries already below that threshold are skipped, which cannot block
    convergence because the stopping test uses the same threshold.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"spectrum: matrix must be square, got {a.shape}")
    n = a.shape[0]
    scale = max(1.0, float(np.abs(a).max())) if a.size else 1.0
    if np.abs(a - a.T).max(initial=0.0) > 1e-12 * scale:
        raise ContractError("spectrum: matrix must be symmetric")
    if n == 1:
        return a.diagonal().copy()
    a = 0.5 * (a + a.T)  # remove rounding-level asymmetry before rotating
    fro = float(np.sqrt((a ** 2).sum()))
    if fro == 0.0:
        return np.zeros(n)
    threshold = _JACOBI_TOL_FACTOR * fro
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        if np.abs(a[off_mask]).max() < threshold:
            return np.sort(a.diagonal())
        for p in range(n - 1):
            row_p = a[p]
            for q in range(p + 1, n):
                apq = row_p[q]
                if abs(apq) < threshold:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau)) if tau != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p_new = a[p].copy()
                row_q_new = a[q].copy()
                a[p] = c * row_p_new - s * row_q_new
                a[q] = s * row_p_new + c * row_q_new
                a[p, q] = 0.0
                a[q, p] = 0.0
                row_p = a[p]
    if np.abs(a[off_mask]).max() < threshold:
        return np.sort(a.diagonal())
    raise NumericError(f"spectrum: Jacobi sweeps did not converge within {max_sweeps} sweeps")


def count_zero_eigenvalues(eigenvalues: np.ndarray) -> int:
    """Zeros relative to the spectral radius: |lambda| <= 1e-8 * max(1, max|lambda|)."""
    eig = np.asarray(eigenvalues, dtype=np.float64)
    tol = ZERO_EIGENVALUE_FACTOR * max(1.0, float(np.abs(eig).max(initial=0.0)))
    return int((np.abs(eig) <= tol).sum())


def fiedler(lap: np.ndarray, max_sweeps: int = 100) -> float:
    """Second-smallest eigenvalue of a symmetric PSD matrix; positive iff
    the underlying graph is connected."""
    lap = np.asarray(lap, dtype=np.float64)
    if lap.ndim != 2 or lap.shape[0] < 2:
        raise ContractError(f"fiedler: need at least a 2x2 matrix, got {lap.shape}")
    return float(spectrum(lap, max_sweeps=max_sweeps)[1])


def connected_components(weights: np.ndarray) -> int:
    """BFS component count over the support graph {(i, j): W_ij > 0}."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ContractError(f"connected_components: matrix must be square, got {w.shape}")
    n = w.shape[0]
    neighbors = [np.nonzero(w[i] > 0)[0] for i in range(n)]
    seen = np.zeros(n, dtype=bool)
    count = 0
    for start in range(n):
        if seen[start]:
            continue
        count += 1
        queue = deque([start])
        seen[start] = True
        while queue:
            i = queue.popleft()
            for j in neighbors[i]:
                if not seen[j]:
                    seen[j] = True
                    queue.append(j)
    return count


# ---------------------------------------------------------------------------
# Per-sample reports


@dataclass
class SpectralSummary:
    eigenvalues: np.ndarray  # ascending
    zero_count: int
    fiedler: float
    component_count: int


@dataclass
class DiagnosticsReport:
    rho_original: float
    rho_mended: float
    delta_rho: float
    dirichlet_original: float
    dirichlet_mended: float
    delta_dirichlet: float
    original: SpectralSummary
    mended: SpectralSummary


def spectral_summary(weights: np.ndarray) -> SpectralSummary:
    eigs = spectrum(laplacian(weights))
    return SpectralSummary(
        eigenvalues=eigs,
        zero_count=count_zero_eigenvalues(eigs),
        fiedler=float(eigs[1]) if eigs.shape[0] >= 2 else float("nan"),
        component_count=connected_components(weights),
    )


def build_report(original: np.ndarray, mended: np.ndarray, features: np.ndarray,
                 padded: np.ndarray | None = None, include_padded: bool = False) -> DiagnosticsReport:
    """Full before/after report for one supergraph.

    Sparsity and Dirichlet energy use the full matrices. Spectral
    quantities exclude padded isolated nodes by default, so padding
    artifacts do not masquerade as real disconnection.
    """
    original = np.asarray(original, dtype=np.float64)
    mended = np.asarray(mended, dtype=np.float64)
    h_orig = dirichlet(features, original)
    h_mend = dirichlet(features, mended)
    spec_orig, spec_mend = original, mended
    if padded is not None and not include_padded:
        real = ~np.asarray(padded, dtype=bool)
        spec_orig = original[np.ix_(real, real)]
        spec_mend = mended[np.ix_(real, real)]
    return DiagnosticsReport(
        rho_original=sparsity(original),
        rho_mended=sparsity(mended),
        delta_rho=sparsity(original) - sparsity(mended),
        dirichlet_original=h_orig,
        dirichlet_mended=h_mend,
        delta_dirichlet=h_mend - h_orig,
        original=spectral_summary(spec_orig),
        mended=spectral_summary(spec_mend),
    )


_CSV_COLUMNS = (
    "sample_id", "rho_before", "rho_after", "delta_rho",
    "dirichlet_before", "dirichlet_after", "delta_dirichlet",
    "zero_count_before", "zero_count_after",
    "fiedler_before", "fiedler_after",
    "components_before", "components_after",
)


def _report_row(sample_id: str, r: DiagnosticsReport) -> list:
    return [
        sample_id, r.rho_original, r.rho_mended, r.delta_rho,
        r.dirichlet_original, r.dirichlet_mended, r.delta_dirichlet,
        r.original.zero_count, r.mended.zero_count,
        r.original.fiedler, r.mended.fiedler,
        r.original.component_count, r.mended.component_count,
    ]


def format_float(x) -> str:
    """Shortest decimal string that round-trips to the same float64."""
    return repr(float(x))


def write_report_csv(path, sample_ids: list[str], reports: list[DiagnosticsReport]) -> None:
    lines = [",".join(_CSV_COLUMNS)]
    for sid, rep in zip(sample_ids, reports):
        row = _report_row(sid, rep)
        lines.append(",".join(v if isinstance(v, str) else
                              (str(v) if isinstance(v, int) else format_float(v))
                              for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_report_jsonl(path, sample_ids: list[str], reports: list[DiagnosticsReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, rep in zip(sample_ids, reports):
            row = _report_row(sid, rep)
            fh.write(json.dumps(dict(zip(_CSV_COLUMNS, row))) + "\n")
        if reports:
            aggregate = {
                "aggregate": True,
                "mean_delta_rho": float(np.mean([r.delta_rho for r in reports])),
                "mean_delta_dirichlet": float(np.mean([r.delta_dirichlet for r in reports])),
                "mean_fiedler_before": float(np.mean([r.original.fiedler for r in reports])),
                "mean_fiedler_after": float(np.mean([r.mended.fiedler for r in reports])),
            }
            fh.write(json.dumps(aggregate) + "\n")


def write_spectrum_csv(path, eigenvalues: np.ndarray) -> None:
    """Two-column dump (index, eigenvalue) for external plotting."""
    lines = ["index,eigenvalue"]
    for i, lam in enumerate(np.asarray(eigenvalues, dtype=np.float64)):
        lines.append(f"{i},{format_float(lam)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
