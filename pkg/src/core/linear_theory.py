"""
Closed-form theory of one-unit linear autoencoders

For centered data x with covariance Σ, an encoder row vector E (y = E·x) and
a decoder column vector R (x̂ = R·y) have the expected reconstruction loss

    E‖x − R·E·x‖² = Σ_i [Σ_ii − 2·R_i·(ΣEᵀ)_i + R_i²·(EΣEᵀ)]

The jointly optimal pair projects onto the top eigenvector of Σ. With the
encoder held fixed the best decoder is R* = ΣEᵀ / (EΣEᵀ), which can
reconstruct some coordinates far better than others.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .ops import dense, mse_loss
from .optim import Adam
from .tensor import Tape, Tensor, parameter, precision
from ..utils.errors import ConfigError, DegenerateEncoderError, NonConvergenceError, ShapeError
from ..utils.logger import default_logger

SYMMETRY_TOL = 1e-10
MAX_ANALYSIS_DIM = 64

logger = default_logger


def _as_matrix(sigma: np.ndarray) -> np.ndarray:
    matrix = np.asarray(sigma, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ShapeError(f"Covariance must be a square matrix, got shape {matrix.shape}")
    if matrix.shape[0] > MAX_ANALYSIS_DIM:
        raise ShapeError(f"Analysis dimension {matrix.shape[0]} exceeds {MAX_ANALYSIS_DIM}")
    if np.max(np.abs(matrix - matrix.T), initial=0.0) > SYMMETRY_TOL:
        raise ConfigError("Covariance must be symmetric")
    return (matrix + matrix.T) / 2.0


def _as_row(vector: Union[np.ndarray, Sequence[float]], dim: int, what: str) -> np.ndarray:
    row = np.asarray(vector, dtype=np.float64).reshape(-1)
    if row.shape != (dim,):
        raise ShapeError(f"{what} must have {dim} entries, got {np.shape(vector)}")
    return row


def _sign_normalized(u: np.ndarray) -> np.ndarray:
    """Flip u so its first clearly nonzero component is positive"""
    for value in u:
        if abs(value) > 1e-12:
            return u if value > 0 else -u
    return u


def covariance_of(samples: np.ndarray) -> np.ndarray:
    """Biased (1/N) covariance of N×d samples, centered internally"""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"Samples must be N×d, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ConfigError(f"Covariance needs at least 2 samples, got {x.shape[0]}")
    centered = x - x.mean(axis=0)
    sigma = centered.T @ centered / x.shape[0]
    return (sigma + sigma.T) / 2.0


@dataclass(frozen=True)
class EigenBasis:
    """Eigenvalues in descending order, eigenvectors as the columns of `vectors`"""

    values: np.ndarray
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def vector(self, k: int) -> np.ndarray:
        """k-th eigenvector, 1-based (u1 is the top one)"""
        return self.vectors[:, k - 1]


def _power_iteration(matrix: np.ndarray, found: np.ndarray, tol: float, max_iter: int,
                     rng: np.random.Generator) -> Tuple[float, np.ndarray]:
    d = matrix.shape[0]
    # Gershgorin lower bound; shifting by it makes the wanted eigenvalue dominant
    radii = np.abs(matrix).sum(axis=1) - np.abs(np.diag(matrix))
    shift = max(0.0, -float(np.min(np.diag(matrix) - radii)))
    threshold = tol * max(1.0, float(np.linalg.norm(matrix)))

    def project(v: np.ndarray) -> np.ndarray:
        return v - found @ (found.T @ v) if found.shape[1] else v

    x = project(rng.standard_normal(d))
    if np.linalg.norm(x) < 1e-12:
        x = project(np.ones(d))
    x /= np.linalg.norm(x)

    residual = np.inf
    for _ in range(max_iter):
        mx = matrix @ x
        lam = float(x @ mx)
        residual = float(np.linalg.norm(project(mx) - lam * x))
        if residual <= threshold:
            return lam, x
        y = project(mx + shift * x)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            break
        x = y / norm
    logger.error(f"Power iteration stopped after {max_iter} iterations, residual {residual:.3e}")
    raise NonConvergenceError(
        f"Power iteration did not converge in {max_iter} iterations (residual {residual:.3e})",
        residual=residual,
    )


def top_eigenvector(sigma: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000,
                    seed: int = 0) -> Tuple[float, np.ndarray]:
    """Largest eigenvalue λ1 of a symmetric matrix and its unit eigenvector u1"""
    matrix = _as_matrix(sigma)
    rng = np.random.default_rng(seed)
    lam, u = _power_iteration(matrix, np.zeros((matrix.shape[0], 0)), tol, max_iter, rng)
    return lam, _sign_normalized(u)


def eigen_basis(sigma: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000, seed: int = 0) -> EigenBasis:
    """All eigenpairs by repeated power iteration, deflating the directions already found"""
    matrix = _as_matrix(sigma)
    d = matrix.shape[0]
    rng = np.random.default_rng(seed)
    values: List[float] = []
    vectors = np.zeros((d, 0))
    for _ in range(d):
        lam, u = _power_iteration(matrix, vectors, tol, max_iter, rng)
        values.append(lam)
        vectors = np.column_stack([vectors, _sign_normalized(u)])
    order = np.argsort(-np.asarray(values), kind="stable")
    return EigenBasis(values=np.asarray(values)[order], vectors=vectors[:, order])


@dataclass
class LinearAEProblem:
    """
    Covariance Σ of centered data with an encoder row E and decoder column R

    Losses are expectations under Σ rather than sums over samples.
    """

    sigma: np.ndarray
    encoder: np.ndarray
    decoder: np.ndarray
    label: str = ""
    meta: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.sigma = _as_matrix(self.sigma)
        d = self.sigma.shape[0]
        if np.linalg.eigvalsh(self.sigma).min() < -SYMMETRY_TOL:
            raise ConfigError("Covariance must be positive semidefinite")
        self.encoder = _as_row(self.encoder, d, "Encoder")
        self.decoder = _as_row(self.decoder, d, "Decoder")

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def per_coordinate_loss(self) -> np.ndarray:
        cross = self.sigma @ self.encoder
        energy = float(self.encoder @ cross)
        loss = np.diag(self.sigma) - 2.0 * self.decoder * cross + self.decoder ** 2 * energy
        return np.maximum(loss, 0.0)

    @property
    def total_loss(self) -> float:
        return float(self.per_coordinate_loss.sum())

    def reconstruct(self, samples: np.ndarray) -> np.ndarray:
        """x̂ = R·E·x for each row of an N×d sample matrix (no centering)"""
        x = np.asarray(samples, dtype=np.float64)
        return np.outer(x @ self.encoder, self.decoder)


def optimal_linear_ae(sigma: np.ndarray, basis: Optional[EigenBasis] = None) -> LinearAEProblem:
    """E* = u1ᵀ, R* = u1 with expected loss trace(Σ) − λ1"""
    matrix = _as_matrix(sigma)
    if basis is None:
        lam, u1 = top_eigenvector(matrix)
    else:
        lam, u1 = float(basis.values[0]), basis.vector(1)
    problem = LinearAEProblem(sigma=matrix, encoder=u1, decoder=u1, label="optimal")
    problem.meta["lambda1"] = lam
    problem.meta["closed_form_loss"] = float(np.trace(matrix)) - lam
    return problem


def optimal_decoder_fixed_encoder(sigma: np.ndarray, encoder: Union[np.ndarray, Sequence[float]],
                                  label: str = "") -> LinearAEProblem:
    """Least-squares decoder for a fixed encoder: R* = ΣEᵀ / (EΣEᵀ)"""
    matrix = _as_matrix(sigma)
    e = _as_row(encoder, matrix.shape[0], "Encoder")
    if not np.any(e):
        raise DegenerateEncoderError("Encoder is the zero vector")
    cross = matrix @ e
    energy = float(e @ cross)
    if energy <= 1e-15 * max(1.0, float(np.trace(matrix))):
        raise DegenerateEncoderError("Encoder annihilates all variance (EΣEᵀ = 0)")
    return LinearAEProblem(sigma=matrix, encoder=e, decoder=cross / energy, label=label)


def _encoder_choice(choice: Union[str, Sequence[float]], basis: EigenBasis) -> Tuple[str, np.ndarray]:
    if isinstance(choice, str):
        name = choice.strip()
        if name.startswith("u") and name[1:].isdigit():
            k = int(name[1:])
            if not 1 <= k <= len(basis):
                raise ConfigError(f"Encoder {name} does not exist in dimension {len(basis)}")
            return name, basis.vector(k)
        try:
            vector = np.array([float(v) for v in name.split(",")])
        except ValueError:
            raise ConfigError(f"Encoder must be u<k> or a comma-separated vector, got {choice!r}")
        return name, vector
    vector = np.asarray(choice, dtype=np.float64)
    return ",".join(f"{v:g}" for v in vector), vector


def theory_demo(samples: np.ndarray, encoder_choices: Sequence[Union[str, Sequence[float]]] = ("u1", "u2"),
                covariance: Optional[np.ndarray] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Per-coordinate losses of the fixed-encoder model for several encoders

    Returns (table, scatter): one table row per encoder with the closed-form
    and empirical per-coordinate losses, and one scatter row per
    (encoder, sample) holding x and its reconstruction.
    """
    x = np.asarray(samples, dtype=np.float64)
    sigma = covariance_of(x) if covariance is None else _as_matrix(covariance)
    if x.ndim != 2 or x.shape[1] != sigma.shape[0]:
        raise ShapeError(f"Samples of shape {x.shape} do not match a {sigma.shape[0]}-dim covariance")
    basis = eigen_basis(sigma)
    optimum = float(np.trace(sigma) - basis.values[0])
    centered = x - x.mean(axis=0)
    dims = range(1, sigma.shape[0] + 1)

    table_rows = []
    scatter_parts = []
    for choice in encoder_choices:
        name, e = _encoder_choice(choice, basis)
        problem = optimal_decoder_fixed_encoder(sigma, e, label=name)
        x_hat = problem.reconstruct(centered)
        empirical = ((centered - x_hat) ** 2).mean(axis=0)

        row: Dict[str, object] = {"encoder": name}
        row.update({f"e{i}": problem.encoder[i - 1] for i in dims})
        row.update({f"r{i}": problem.decoder[i - 1] for i in dims})
        row.update({f"loss_x{i}": problem.per_coordinate_loss[i - 1] for i in dims})
        row["loss_total"] = problem.total_loss
        row.update({f"empirical_x{i}": empirical[i - 1] for i in dims})
        row["empirical_total"] = float(empirical.sum())
        row["optimal_total"] = optimum
        table_rows.append(row)

        part = pd.DataFrame({"encoder": name, "sample": np.arange(len(x))})
        for i in dims:
            part[f"x{i}"] = centered[:, i - 1]
            part[f"xhat{i}"] = x_hat[:, i - 1]
        scatter_parts.append(part)
        logger.info(f"Encoder {name}: per-coordinate losses {np.round(problem.per_coordinate_loss, 6).tolist()}")

    return pd.DataFrame(table_rows), pd.concat(scatter_parts, ignore_index=True)


def anisotropic_samples(variances: Sequence[float], n: int, seed: int = 0) -> np.ndarray:
    """n draws from a zero-mean Gaussian with diagonal covariance diag(variances)"""
    variances = np.asarray(variances, dtype=np.float64)
    if variances.ndim != 1 or np.any(variances < 0):
        raise ConfigError(f"Variances must be a non-negative vector, got {variances}")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, len(variances))) * np.sqrt(variances)


def train_linear_autoencoder(samples: np.ndarray, epochs: int = 100, learning_rate: float = 0.01,
                             batch_size: int = 64, seed: int = 0) -> LinearAEProblem:
    """Fit E and R by Adam on the per-sample squared error using the tensor core"""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError(f"Samples must be N×d with N ≥ 2, got shape {x.shape}")
    if epochs < 1:
        raise ConfigError("train_linear_autoencoder needs at least one epoch")
    centered = x - x.mean(axis=0)
    n, d = centered.shape
    rng = np.random.default_rng(seed)

    with precision("float64"):
        encoder = parameter(rng.normal(0.0, 0.5, size=(d, 1)), name="E")
        decoder = parameter(rng.normal(0.0, 0.5, size=(1, d)), name="R")
        zero_1 = Tensor(np.zeros(1))
        zero_d = Tensor(np.zeros(d))
        optimizer = Adam([encoder, decoder], lr=learning_rate)

        loss_value = float("nan")
        for epoch in range(epochs):
            order = np.random.default_rng([seed, epoch]).permutation(n)
            for start in range(0, n, batch_size):
                batch = Tensor(centered[order[start:start + batch_size]])
                optimizer.zero_grad()
                with Tape() as tape:
                    x_hat = dense(dense(batch, encoder, zero_1), decoder, zero_d)
                    loss = mse_loss(x_hat, batch)
                loss_value = loss.item()
                tape.backward(loss)
                optimizer.step()
        logger.debug(f"Linear autoencoder final batch loss {loss_value:.6f}")

    return LinearAEProblem(sigma=covariance_of(x), encoder=encoder.data[:, 0].copy(),
                           decoder=decoder.data[0].copy(), label="trained")


def alignment(a: np.ndarray, b: np.ndarray) -> float:
    """|cos| of the angle between two vectors"""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    return float(abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))
