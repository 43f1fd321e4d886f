"""Structured application of the cascade generators, batched over trajectories.

Every operator in the model is a Kronecker product of a banded cavity factor
(lowering, raising, number) with a 3x3 atom factor, so applying it costs
O(dim^2) slicing instead of an O(dim^3) dense product.  Kets live on arrays
with trailing axes (cavity_dim, 3); density matrices on arrays with trailing
axes (cavity_dim, 3, cavity_dim, 3).  Leading axes are independent
trajectories.

The combined no-jump drift operator

    M = -i H - 1/2 (L0^+ L0 + kappa * Pe)

collapses analytically to a diagonal plus a single one-way absorption term
proportional to (a x |e><1|): the interaction-Hamiltonian terms that would
feed excitation back into the source cavity cancel against half of the
monitored-channel cross terms, which is the cascaded (chiral) structure of
the model.  All drifts below are built from M, its adjoint action, and the
sandwich terms L rho L^+.
"""

from __future__ import annotations

import math

import numpy as np

# Atom basis indices in the fixed (|0>, |1>, |e>) ordering.
G0, G1, EXC = 0, 1, 2


class CascadeKernel:
    """Operator applications for one set of physical rates on one truncation."""

    def __init__(self, cavity_dim: int, gamma: float, kappa: float, detuning: float):
        self.nc = int(cavity_dim)
        self.gamma = float(gamma)
        self.kappa = float(kappa)
        self.detuning = float(detuning)
        self.sqrt_gamma = math.sqrt(self.gamma)
        self.sqrt_kappa = math.sqrt(self.kappa)
        # lower[n] = sqrt(n+1): (a psi)[n] = lower[n] * psi[n+1]
        self.lower = np.sqrt(np.arange(1, self.nc, dtype=float))
        self.nvals = np.arange(self.nc, dtype=float)
        # Excited-level complex decay coefficient appearing in M.
        self._e_coeff = 0.5 * (self.gamma + self.kappa) + 1j * self.detuning

    # ------------------------------------------------------------------ kets

    def _diag_ket(self, g2: float) -> np.ndarray:
        d = np.zeros((self.nc, 3), dtype=complex)
        d -= 0.5 * g2 * self.nvals[:, None]
        d[:, EXC] -= self._e_coeff
        return d

    def drift_ket(self, psi: np.ndarray, g: complex, g2: float) -> np.ndarray:
        """M psi, the no-jump drift for pure states."""
        out = psi * self._diag_ket(g2)
        out[..., :-1, EXC] -= (self.sqrt_gamma * np.conj(g)) * (self.lower * psi[..., 1:, G1])
        return out

    def forward_ket(self, psi: np.ndarray, g: complex) -> np.ndarray:
        """L0 psi = conj(g) (a x I) psi + sqrt(gamma) (I x |1><e|) psi."""
        out = np.zeros_like(psi)
        out[..., :-1, :] = np.conj(g) * (self.lower[:, None] * psi[..., 1:, :])
        out[..., :, G1] += self.sqrt_gamma * psi[..., :, EXC]
        return out

    def side_ket(self, psi: np.ndarray) -> np.ndarray:
        """L1 psi = sqrt(kappa) (I x |1><e|) psi."""
        out = np.zeros_like(psi)
        out[..., :, G1] = self.sqrt_kappa * psi[..., :, EXC]
        return out

    @staticmethod
    def norm_sq_ket(psi: np.ndarray) -> np.ndarray:
        return np.sum(np.abs(psi) ** 2, axis=(-2, -1))

    @staticmethod
    def photons_ket(psi: np.ndarray) -> np.ndarray:
        n = np.arange(psi.shape[-2], dtype=float)[:, None]
        return np.sum(n * np.abs(psi) ** 2, axis=(-2, -1))

    @staticmethod
    def excited_ket(psi: np.ndarray) -> np.ndarray:
        return np.sum(np.abs(psi[..., :, EXC]) ** 2, axis=-1)

    # ------------------------------------------------------- density matrices

    def _diag_mat(self, g2: float) -> np.ndarray:
        d = self._diag_ket(g2)
        return d[:, :, None, None] + np.conj(d)[None, None, :, :]

    def counting_drift_mat(self, rho: np.ndarray, g: complex, g2: float) -> np.ndarray:
        """M rho + rho M^+ + kappa (c rho c^+): no-click evolution with the side loss."""
        out = rho * self._diag_mat(g2)
        cg = self.sqrt_gamma * np.conj(g)
        out[..., :-1, EXC, :, :] -= cg * (self.lower[:, None, None] * rho[..., 1:, G1, :, :])
        out[..., :, :, :-1, EXC] -= np.conj(cg) * (self.lower * rho[..., :, :, 1:, G1])
        if self.kappa:
            out[..., :, G1, :, G1] += self.kappa * rho[..., :, EXC, :, EXC]
        return out

    def forward_sandwich_mat(self, rho: np.ndarray, g: complex) -> np.ndarray:
        """L0 rho L0^+ (the click update, and the sandwich part of D[L0])."""
        g2 = abs(g) ** 2
        out = np.zeros_like(rho)
        out[..., :-1, :, :-1, :] = g2 * (
            self.lower[:, None, None, None] * self.lower[None, None, :, None] * rho[..., 1:, :, 1:, :]
        )
        out[..., :, G1, :, G1] += self.gamma * rho[..., :, EXC, :, EXC]
        cross = self.sqrt_gamma * np.conj(g)
        out[..., :-1, :, :, G1] += cross * (self.lower[:, None, None] * rho[..., 1:, :, :, EXC])
        out[..., :, G1, :-1, :] += np.conj(cross) * (self.lower[:, None] * rho[..., :, EXC, 1:, :])
        return out

    def lindblad_drift_mat(self, rho: np.ndarray, g: complex, g2: float) -> np.ndarray:
        """Full deterministic generator: counting drift plus the monitored sandwich."""
        return self.counting_drift_mat(rho, g, g2) + self.forward_sandwich_mat(rho, g)

    def forward_left_mat(self, rho: np.ndarray, g: complex) -> np.ndarray:
        """L0 rho."""
        out = np.zeros_like(rho)
        out[..., :-1, :, :, :] = np.conj(g) * (self.lower[:, None, None, None] * rho[..., 1:, :, :, :])
        out[..., :, G1, :, :] += self.sqrt_gamma * rho[..., :, EXC, :, :]
        return out

    def measurement_mat(self, rho: np.ndarray, g: complex, phase: float) -> np.ndarray:
        """L rho + rho L^+ for L = exp(-i phase) L0 (homodyne back-action term)."""
        z = np.exp(-1j * phase) * self.forward_left_mat(rho, g)
        return z + np.conj(np.swapaxes(np.swapaxes(z, -4, -2), -3, -1))

    # -------------------------------------------------------------- averages

    @staticmethod
    def trace_mat(rho: np.ndarray) -> np.ndarray:
        return np.einsum("...nsns->...", rho).real

    def flux_mat(self, rho: np.ndarray, g: complex, g2: float) -> np.ndarray:
        """Tr(L0^+ L0 rho) for Hermitian rho (unnormalized)."""
        diag = np.einsum("...nsns->...ns", rho)
        nbar = np.sum(self.nvals[:, None] * diag.real, axis=(-2, -1))
        pe = diag[..., :, EXC].sum(axis=-1).real
        tr_k = np.sum(self.lower * rho[..., :-1, EXC, 1:, G1].diagonal(axis1=-2, axis2=-1), axis=-1)
        return g2 * nbar + self.gamma * pe + 2.0 * self.sqrt_gamma * (g * tr_k).real

    def flux_ket(self, psi: np.ndarray, g: complex) -> np.ndarray:
        return self.norm_sq_ket(self.forward_ket(psi, g))

    def trace_forward_mat(self, rho: np.ndarray, g: complex) -> np.ndarray:
        """Tr(L0 rho) (complex)."""
        # sub[..., s, t, m] = rho[m+1, s, m, t]; keep s == t, weight by sqrt(m+1).
        sub = rho[..., 1:, :, :-1, :].diagonal(axis1=-4, axis2=-2)
        diag_st = sub.diagonal(axis1=-3, axis2=-2)  # (..., m, s)
        tr_a = np.sum(self.lower[:, None] * diag_st, axis=(-2, -1))
        tr_c = np.sum(rho[..., :, EXC, :, G1].diagonal(axis1=-2, axis2=-1), axis=-1)
        return np.conj(g) * tr_a + self.sqrt_gamma * tr_c

    @staticmethod
    def photons_mat(rho: np.ndarray) -> np.ndarray:
        diag = np.einsum("...nsns->...ns", rho)
        n = np.arange(rho.shape[-2], dtype=float)[:, None]
        return np.sum(n * diag.real, axis=(-2, -1))

    @staticmethod
    def excited_mat(rho: np.ndarray) -> np.ndarray:
        diag = np.einsum("...nsns->...ns", rho)
        return diag[..., :, EXC].sum(axis=-1).real

    @staticmethod
    def min_eigenvalue_mat(rho: np.ndarray) -> np.ndarray:
        """Smallest eigenvalue per batched state (validation mode only)."""
        nc3 = rho.shape[-2] * rho.shape[-1]
        flat = rho.reshape(rho.shape[:-4] + (nc3, nc3))
        flat = 0.5 * (flat + np.conj(np.swapaxes(flat, -2, -1)))
        return np.linalg.eigvalsh(flat)[..., 0]

    @staticmethod
    def hermiticity_defect_mat(rho: np.ndarray) -> np.ndarray:
        swapped = np.conj(np.swapaxes(np.swapaxes(rho, -4, -2), -3, -1))
        return np.max(np.abs(rho - swapped), axis=(-4, -3, -2, -1))
